#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "stpi/harness/ablate.hpp"
#include "stpi/harness/config.hpp"
#include "stpi/harness/evaluate.hpp"
#include "stpi/harness/metrics.hpp"
#include "stpi/harness/model.hpp"
#include "stpi/harness/probe.hpp"
#include "stpi/harness/training.hpp"
#include "stpi/world/dataset.hpp"

namespace fs = std::filesystem;
using namespace stpi;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

harness::PipelineConfig build_config(const Common& c) {
  harness::PipelineConfig cfg;
  if (!c.config.empty()) cfg = harness::load_config(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    harness::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.sync();
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Config file (key = value lines)");
  app->add_option("--set", c.sets, "Override, key=value (repeatable)");
}

int check_report(const harness::EvalReport& r) {
  int bad = 0;
  for (const auto& s : r.suites) {
    if (s.success_rate < 0.0 || s.success_rate > 1.0) ++bad;
    if (s.successes > 0 && !(s.completion_time > 0.0)) ++bad;
  }
  if (bad) std::cerr << "invariant violated: " << bad << " suite rows out of range\n";
  return bad ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatiotemporal planner + action expert, desk scale"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_suite = "mixed", gd_out;
  std::size_t gd_episodes = 200;
  std::uint64_t gd_seed = 1;
  auto* gen = app.add_subcommand("gen-data", "Generate oracle demonstrations (JSON lines)");
  gen->add_option("--suite", gd_suite, "Suite or mix, e.g. mixed, SequentialGoal, ObjectRecognition:1,LongHorizon:2");
  gen->add_option("--episodes", gd_episodes, "Episode count");
  gen->add_option("--seed", gd_seed, "Dataset seed");
  gen->add_option("--out", gd_out, "Output file")->required();

  // train
  Common tr_common;
  std::string tr_stage = "all", tr_in, tr_out, tr_data, tr_curve;
  auto* train = app.add_subcommand("train", "Run training stage 0 (pretraining), 1, 2, 3 or all");
  add_common(train, tr_common);
  train->add_option("--stage", tr_stage, "0, 1, 2, 3 or all")->check(CLI::IsMember({"0", "1", "2", "3", "all"}));
  train->add_option("--in", tr_in, "Checkpoint to continue from");
  train->add_option("--out", tr_out, "Checkpoint to write")->required();
  train->add_option("--data", tr_data, "Dataset; generated from data.* keys when omitted");
  train->add_option("--loss-csv", tr_curve, "Loss curve CSV");

  // eval
  Common ev_common;
  std::string ev_ckpt, ev_suite, ev_policy = "model", ev_out, ev_episodes_csv, ev_plans, ev_data;
  std::size_t ev_episodes = 0, ev_workers = 0;
  std::uint64_t ev_seeds = 0;
  bool ev_seeds_set = false;
  auto* eval = app.add_subcommand("eval", "Closed-loop evaluation");
  add_common(eval, ev_common);
  eval->add_option("--ckpt", ev_ckpt, "Checkpoint (model policy)");
  eval->add_option("--suite", ev_suite, "Suite or mix");
  eval->add_option("--episodes", ev_episodes, "Episode count");
  eval->add_option("--seeds", ev_seeds, "Base seed; episode i uses mix(seed, i)")->each([&](const std::string&) {
    ev_seeds_set = true;
  });
  eval->add_option("--policy", ev_policy, "model, oracle, random or replay")
      ->check(CLI::IsMember({"model", "oracle", "random", "replay"}));
  eval->add_option("--data", ev_data, "Dataset for the replay policy");
  eval->add_option("--workers", ev_workers, "Worker threads, 0 = all cores");
  eval->add_option("--out", ev_out, "Suite report CSV");
  eval->add_option("--episodes-csv", ev_episodes_csv, "Per-episode CSV");
  eval->add_option("--plans", ev_plans, "Plan trace (JSON lines)");

  // ablate
  Common ab_common;
  std::string ab_axis, ab_out, ab_data;
  double ab_budget = 0.0;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every variant on one axis");
  add_common(ablate, ab_common);
  ablate->add_option("--axis", ab_axis, "framework, attention, modality, granularity or fusion")
      ->required()
      ->check(CLI::IsMember({"framework", "attention", "modality", "granularity", "fusion"}));
  ablate->add_option("--data", ab_data, "Dataset; generated from data.* keys when omitted");
  ablate->add_option("--budget", ab_budget, "Wall-clock budget in seconds, 0 = none");
  ablate->add_option("--out", ab_out, "Table CSV");

  // plot
  Common pl_common;
  std::string pl_ckpt, pl_policy = "model", pl_out;
  std::size_t pl_episode = 0;
  auto* plot = app.add_subcommand("plot", "Run one evaluation episode and export its trajectory");
  add_common(plot, pl_common);
  plot->add_option("--ckpt", pl_ckpt, "Checkpoint (model policy)");
  plot->add_option("--episode", pl_episode, "Episode index within the evaluation")->required();
  plot->add_option("--policy", pl_policy, "model, oracle or random")->check(CLI::IsMember({"model", "oracle", "random"}));
  plot->add_option("--out", pl_out, "Output stem; writes <stem>.csv and <stem>.svg")->required();

  // probe
  std::string pr_ckpt, pr_data;
  std::size_t pr_samples = 200;
  auto* probe = app.add_subcommand("probe", "Teacher-forced planner and expert scores on a dataset");
  probe->add_option("--ckpt", pr_ckpt, "Checkpoint")->required();
  probe->add_option("--data", pr_data, "Dataset")->required();
  probe->add_option("--samples", pr_samples, "Expert chunks to sample");

  // config
  Common cf_common;
  auto* config = app.add_subcommand("config", "Print the resolved configuration");
  add_common(config, cf_common);

  CLI11_PARSE(app, argc, argv);

  const auto load_data = [](const std::string& path, const harness::PipelineConfig& cfg) {
    if (!path.empty()) return world::load_dataset(path);
    return world::generate_records(cfg.data);
  };

  try {
    if (*gen) {
      world::DatasetConfig dc;
      dc.mix = world::parse_suite_mix(gd_suite);
      dc.episodes = gd_episodes;
      dc.seed = gd_seed;
      const auto n = world::generate_dataset(dc, gd_out);
      std::cout << "wrote " << n << " episodes to " << gd_out << "\n";
      return 0;
    }
    if (*probe) {
      const auto m = harness::load_model(pr_ckpt);
      const auto data = world::load_dataset(pr_data);
      const auto ps = harness::probe_planner(*m, data);
      std::cout << "planner: " << ps.prompts << " prompts, token accuracy " << ps.token_accuracy << ", exact "
                << ps.exact_match << ", position error " << ps.position_error << " m, duration error "
                << ps.duration_error << " s\n";
      const auto es = harness::probe_expert(*m, data, pr_samples, 1);
      std::cout << "expert: " << es.chunks << " chunks, error " << es.chunk_error << " (normalized), step error "
                << es.position_error << " m\n";
      return 0;
    }
    if (*config) {
      std::cout << harness::config_to_text(build_config(cf_common));
      return 0;
    }
    if (*train) {
      std::unique_ptr<harness::Model> m;
      if (!tr_in.empty()) {
        m = harness::load_model(tr_in);
        if (!tr_common.config.empty() || !tr_common.sets.empty()) {
          auto cfg = build_config(tr_common);
          auto fresh = std::make_unique<harness::Model>(cfg);
          harness::load_weights(*fresh, tr_in);
          m = std::move(fresh);
        }
      } else {
        m = std::make_unique<harness::Model>(build_config(tr_common));
      }
      const auto data = load_data(tr_data, m->cfg);
      const harness::LossLogger log = [](const std::string& phase, const harness::LossPoint& p) {
        std::cout << "stage " << phase << " step " << p.step << " loss " << p.total << " (L " << p.language << ", s "
                  << p.spatial << ", tau " << p.temporal << ", ae " << p.ae << ")" << std::endl;
      };
      std::vector<harness::StageResult> results;
      for (int st = 0; st <= 3; ++st) {
        if (tr_stage != "all" && tr_stage != std::to_string(st)) continue;
        if (st == 0 && m->cfg.train.stage0.steps == 0) continue;
        for (auto& r : harness::train_stage(*m, st, data, log)) {
          std::cout << "phase " << r.phase << ": " << r.trainable << " trainable, " << r.frozen << " frozen, "
                    << r.seconds << " s, freeze " << (r.freeze_ok() ? "ok" : "VIOLATED") << "\n";
          results.push_back(std::move(r));
        }
      }
      harness::save_model(*m, tr_out);
      if (!tr_curve.empty()) harness::write_loss_curve(tr_curve, results);
      for (const auto& r : results)
        if (!r.freeze_ok()) return 3;
      return 0;
    }
    if (*eval || *plot) {
      const Common& common = *eval ? ev_common : pl_common;
      const std::string& ckpt = *eval ? ev_ckpt : pl_ckpt;
      const auto policy = *harness::parse_policy(*eval ? ev_policy : pl_policy);
      std::unique_ptr<harness::Model> m;
      harness::PipelineConfig cfg;
      if (policy == harness::PolicyKind::Model) {
        if (ckpt.empty()) throw std::invalid_argument("model policy needs --ckpt");
        m = harness::load_model(ckpt);
        cfg = m->cfg;
        if (!common.config.empty() || !common.sets.empty()) {
          // Only eval.* keys may change for a trained checkpoint.
          auto over = build_config(common);
          cfg.eval = over.eval;
        }
      } else {
        cfg = build_config(common);
      }
      if (*eval) {
        if (!ev_suite.empty()) cfg.eval.suite = ev_suite;
        if (ev_episodes) cfg.eval.episodes = ev_episodes;
        if (ev_seeds_set) cfg.eval.seed = ev_seeds;
        if (ev_workers) cfg.eval.workers = ev_workers;
        std::vector<world::EpisodeRecord> records;
        if (policy == harness::PolicyKind::Replay) {
          if (ev_data.empty()) throw std::invalid_argument("replay policy needs --data");
          records = world::load_dataset(ev_data);
        }
        const auto t0 = std::chrono::steady_clock::now();
        const auto report = harness::evaluate(m.get(), policy, cfg.eval, records.empty() ? nullptr : &records);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto csv = harness::report_csv(report);
        std::cout << csv << "(" << secs << " s)\n";
        if (!ev_out.empty()) write_text(ev_out, csv);
        if (!ev_episodes_csv.empty()) write_text(ev_episodes_csv, harness::episodes_csv(report));
        if (!ev_plans.empty()) {
          std::vector<vlm::PlanTraceRow> rows;
          for (const auto& e : report.episodes) rows.insert(rows.end(), e.plans.begin(), e.plans.end());
          vlm::write_plan_trace(ev_plans, rows);
        }
        return check_report(report);
      }
      const auto specs = harness::eval_episodes(cfg.eval);
      if (pl_episode >= specs.size())
        throw std::invalid_argument("--episode out of range; eval.episodes = " + std::to_string(specs.size()));
      const auto e = harness::run_episode(m.get(), policy, specs[pl_episode], cfg.eval);
      harness::export_trajectory(e, pl_out);
      std::cout << "episode " << e.index << " (" << world::suite_name(e.suite) << "): "
                << (e.success ? "success" : "failure " + e.failure) << ", " << e.steps << " steps, CT "
                << e.completion_time << " s\n";
      if (e.trajectory.size() >= 3) {
        const auto tm = harness::trajectory_metrics(e);
        std::cout << "path " << tm.path_length << " m, jerk " << tm.mean_jerk << ", velocity variance "
                  << tm.velocity_variance << "\n";
      }
      return 0;
    }
    if (*ablate) {
      const auto cfg = build_config(ab_common);
      const auto axis = *harness::parse_axis(ab_axis);
      harness::AblationRunner runner(load_data(ab_data, cfg), ab_budget,
                                     [](const std::string& s) { std::cout << s << std::endl; });
      const auto rows = runner.run_axis(axis, cfg);
      const auto csv = harness::ablation_csv(rows);
      std::cout << csv;
      if (!ab_out.empty()) write_text(ab_out, csv);
      for (const auto& r : rows)
        if (r.partial) {
          std::cerr << "table is partial: budget exhausted\n";
          return 4;
        }
      return 0;
    }
  } catch (const harness::FreezeViolation& e) {
    std::cerr << "freeze violation: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
