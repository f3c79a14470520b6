#include "stpi/harness/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "stpi/world/dynamics.hpp"
#include "stpi/world/oracle.hpp"
#include "stpi/world/render.hpp"
#include "stpi/world/tasks.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::harness {

namespace {

constexpr std::uint64_t kRandomStream = 0x7a3d;
constexpr std::uint64_t kDecodeStream = 0x5eed;
constexpr std::uint64_t kChunkStream = 0xc4a0;

std::optional<world::SubTaskAnnotation> resolve_prompt(const vlm::ActionPrompt& p, const world::EpisodeState& s,
                                                       const world::WorldConfig& wc) {
  const auto parsed = world::parse_description(p.description);
  if (!parsed || parsed->done) return std::nullopt;
  world::SubTaskAnnotation a;
  a.task = parsed->task;
  a.description = p.description;
  try {
    a.box = world::target_box(s, a.task, wc);
  } catch (const std::exception&) {
    return std::nullopt;  // names an object that is not in the scene
  }
  return a;
}

bool subgoal_holds(const std::optional<world::SubTaskAnnotation>& a, const world::EpisodeState& s,
                   const world::WorldConfig& wc) {
  if (!a) return false;
  try {
    return world::check_subgoal(s, *a, wc);
  } catch (const std::exception&) {
    return false;
  }
}

world::ActionStep random_action(nn::Rng& rng, const world::WorldConfig& wc) {
  const double m = wc.max_step;
  return {{rng.uniform(-m, m), rng.uniform(-m, m), rng.uniform(-m, m)},
          rng.uniform(-wc.max_yaw_step, wc.max_yaw_step),
          rng.uniform(0.0, 1.0),
          rng.uniform(wc.dt_min, wc.dt_max)};
}

}  // namespace

std::string policy_name(PolicyKind p) {
  switch (p) {
    case PolicyKind::Model: return "model";
    case PolicyKind::Oracle: return "oracle";
    case PolicyKind::Replay: return "replay";
    case PolicyKind::Random: return "random";
  }
  return "?";
}

std::optional<PolicyKind> parse_policy(const std::string& s) {
  for (PolicyKind p : {PolicyKind::Model, PolicyKind::Oracle, PolicyKind::Replay, PolicyKind::Random})
    if (policy_name(p) == s) return p;
  return std::nullopt;
}

std::vector<EpisodeSpec> eval_episodes(const EvalConfig& eval) {
  const auto mix = world::parse_suite_mix(eval.suite);
  std::vector<EpisodeSpec> out;
  for (std::size_t i = 0; i < eval.episodes; ++i) out.push_back({i, nn::mix_seed(eval.seed, i), mix[i % mix.size()].first});
  return out;
}

EpisodeResult run_episode(const Model* model, PolicyKind policy, const EpisodeSpec& ep, const EvalConfig& eval,
                          const world::EpisodeRecord* replay, const world::WorldConfig& wc) {
  EpisodeResult res;
  res.index = ep.index;
  res.seed = ep.seed;
  world::TaskSpec spec;
  world::EpisodeState s;
  if (policy == PolicyKind::Replay) {
    if (!replay) throw std::invalid_argument("run_episode: replay needs a record");
    spec = replay->spec;
    s = replay->initial;
    res.seed = replay->seed;
  } else {
    spec = world::sample_task(ep.seed, ep.suite);
    s = world::spawn_episode(ep.seed, spec, wc);
  }
  if (policy == PolicyKind::Model && !model) throw std::invalid_argument("run_episode: model policy needs a model");
  res.suite = spec.suite;
  res.start = s.gripper;

  world::TaskProgress progress(spec, wc);
  res.milestones_total = progress.total();
  std::vector<world::RawObservation> hist{world::render_observation(s, wc)};
  std::size_t prompt_k = 0;
  bool ended = false;

  const auto execute = [&](const world::ActionStep& a) {
    s = world::step_dynamics(s, a, wc);
    hist.push_back(world::render_observation(s, wc));
    ++res.steps;
    res.completion_time += a.dt;
    res.trajectory.push_back({s.time, s.gripper, s.gripper_yaw, a.g, a.dt, prompt_k});
    if (progress.update(s)) {
      res.success = true;
      ended = true;
    } else if (res.steps >= eval.max_steps || res.completion_time >= eval.max_time) {
      res.failure = "budget";
      ended = true;
    }
    return ended;
  };

  switch (policy) {
    case PolicyKind::Replay:
      for (std::size_t i = 0; i < replay->actions.size(); ++i) {
        while (prompt_k + 1 < replay->subtasks.size() && i >= replay->subtasks[prompt_k].segment_end) ++prompt_k;
        if (execute(replay->actions[i])) break;
      }
      if (!ended) res.failure = "replay ended before the goal";
      break;
    case PolicyKind::Oracle: {
      world::Demonstration demo;
      try {
        demo = world::demonstrate_task(spec, s, wc);
      } catch (const std::exception& e) {
        res.failure = std::string("oracle: ") + e.what();
        break;
      }
      for (std::size_t i = 0; i < demo.actions.size(); ++i) {
        while (prompt_k + 1 < demo.subtasks.size() && i >= demo.subtasks[prompt_k].segment_end) ++prompt_k;
        if (execute(demo.actions[i])) break;
      }
      if (!ended) res.failure = "demonstration ended before the goal";
      break;
    }
    case PolicyKind::Random: {
      nn::Rng rng(nn::mix_seed(ep.seed, kRandomStream));
      while (!execute(random_action(rng, wc))) {
      }
      break;
    }
    case PolicyKind::Model: {
      const auto& pc = model->cfg.planner;
      const auto encode = [&] {
        return model->planner->encode_4d(vlm::observation_window(hist, hist.size() - 1, pc.frames(), pc.window_stride));
      };
      std::uint64_t chunk_id = 0;
      const auto next_seed = [&] { return nn::mix_seed(nn::mix_seed(ep.seed, kChunkStream), chunk_id++); };

      if (model->cfg.expert.conditioning == ae::Conditioning::Instruction) {
        while (!ended) {
          nn::NoGradGuard guard;
          ae::Condition c;
          c.frame = ae::latest_frame(encode());
          c.proprio = hist.back().proprio;
          c.instruction = spec.instruction;
          const auto chunk = model->expert->sample_chunk(c, next_seed(), 0, nullptr, wc);
          const std::size_t n = eval.execute_steps ? std::min(eval.execute_steps, chunk.size()) : chunk.size();
          for (std::size_t i = 0; i < n; ++i)
            if (execute(chunk[i])) break;
        }
        break;
      }

      const auto truth = world::oracle_decompose(spec, s, wc);
      nn::Rng decode_rng(nn::mix_seed(ep.seed, kDecodeStream));
      std::size_t calls = 0;
      vlm::RollingController ctl(
          [&](const std::vector<std::vector<int>>& history) {
            nn::NoGradGuard guard;
            auto prompts = model->planner->plan(encode(), spec.instruction, history, &decode_rng);
            for (const auto& p : prompts) {
              vlm::PlanTraceRow row{ep.index, history.size() + p.index, p, std::nullopt};
              if (row.k < truth.size()) row.truth = truth[row.k];
              res.plans.push_back(std::move(row));
            }
            ++calls;
            return prompts;
          },
          {eval.beta, eval.replan_cap});
      try {
        ctl.start();
        double prompt_start = s.time;
        auto target = resolve_prompt(ctl.active(), s, wc);
        while (!ended) {
          bool reached = false;
          {
            nn::NoGradGuard guard;
            const auto c = ae::make_condition(encode(), ctl.active(), hist.back().proprio, s.time - prompt_start,
                                              spec.instruction);
            const auto chunk = model->expert->sample_chunk(c, next_seed(), 0, nullptr, wc);
            const std::size_t n = eval.execute_steps ? std::min(eval.execute_steps, chunk.size()) : chunk.size();
            for (std::size_t i = 0; i < n; ++i) {
              if (execute(chunk[i])) break;
              if (subgoal_holds(target, s, wc)) {
                reached = true;
                break;
              }
            }
          }
          if (ended) break;
          const vlm::CompletionSignal sig{reached, s.time - prompt_start};
          if (ctl.completed(sig)) {
            ctl.update(sig);
            ++prompt_k;
            prompt_start = s.time;
            target = resolve_prompt(ctl.active(), s, wc);
          }
        }
      } catch (const vlm::ReplanLimitExceeded&) {
        res.failure = "replan cap";
      }
      res.plan_calls = calls;
      break;
    }
  }
  res.milestones = progress.achieved();
  if (res.success) res.failure.clear();
  return res;
}

EvalReport summarize(std::string policy, std::uint64_t seed, std::vector<EpisodeResult> episodes) {
  EvalReport r;
  r.policy = std::move(policy);
  r.seed = seed;
  std::sort(episodes.begin(), episodes.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  r.first_index = episodes.empty() ? 0 : episodes.front().index;
  std::map<world::Suite, SuiteStats> by_suite;
  double ct_all = 0.0;
  for (const auto& e : episodes) {
    auto& st = by_suite[e.suite];
    st.suite = e.suite;
    ++st.episodes;
    ++r.overall.episodes;
    if (e.success) {
      ++st.successes;
      ++r.overall.successes;
      st.completion_time += e.completion_time;
      ct_all += e.completion_time;
    }
  }
  for (auto& [suite, st] : by_suite) {
    st.success_rate = static_cast<double>(st.successes) / static_cast<double>(st.episodes);
    st.completion_time = st.successes ? st.completion_time / static_cast<double>(st.successes) : 0.0;
    r.suites.push_back(st);
  }
  if (r.overall.episodes) {
    r.overall.success_rate = static_cast<double>(r.overall.successes) / static_cast<double>(r.overall.episodes);
    r.overall.completion_time = r.overall.successes ? ct_all / static_cast<double>(r.overall.successes) : 0.0;
  }
  r.episodes = std::move(episodes);
  return r;
}

EvalReport evaluate(const Model* model, PolicyKind policy, const EvalConfig& eval,
                    const std::vector<world::EpisodeRecord>* records, const world::WorldConfig& wc) {
  std::vector<EpisodeSpec> specs;
  if (policy == PolicyKind::Replay) {
    if (!records) throw std::invalid_argument("evaluate: replay needs records");
    for (std::size_t i = 0; i < records->size(); ++i) specs.push_back({i, (*records)[i].seed, (*records)[i].spec.suite});
  } else {
    specs = eval_episodes(eval);
  }
  std::vector<EpisodeResult> results(specs.size());
  std::size_t workers = eval.workers ? eval.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(specs.size(), 1));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  const auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = next++; i < specs.size(); i = next++)
        results[i] = run_episode(model, policy, specs[i], eval,
                                 policy == PolicyKind::Replay ? &(*records)[i] : nullptr, wc);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return summarize(policy_name(policy), eval.seed, std::move(results));
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(10) << "policy,suite,episodes,successes,success_rate,completion_time\n";
  for (const auto& s : r.suites)
    os << r.policy << ',' << world::suite_name(s.suite) << ',' << s.episodes << ',' << s.successes << ','
       << s.success_rate << ',' << s.completion_time << '\n';
  os << r.policy << ",all," << r.overall.episodes << ',' << r.overall.successes << ',' << r.overall.success_rate << ','
     << r.overall.completion_time << '\n';
  return os.str();
}

std::string episodes_csv(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(10)
     << "index,seed,suite,success,completion_time,steps,plan_calls,milestones,milestones_total,failure\n";
  for (const auto& e : r.episodes)
    os << e.index << ',' << e.seed << ',' << world::suite_name(e.suite) << ',' << (e.success ? 1 : 0) << ','
       << e.completion_time << ',' << e.steps << ',' << e.plan_calls << ',' << e.milestones << ','
       << e.milestones_total << ',' << e.failure << '\n';
  return os.str();
}

}  // namespace stpi::harness
