#include "stpi/harness/training.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "stpi/nn/ops.hpp"
#include "stpi/nn/optim.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::harness {

using nn::Tensor;
using nn::Var;

namespace {

bool is_backbone_base(const std::string& p) {
  return nn::path_has_prefix(p, "planner.backbone") && p.find(".lora.") == std::string::npos;
}

std::vector<std::string> frozen_except(const nn::ParameterSet& ps, const std::vector<std::string>& trainable) {
  std::vector<std::string> out;
  for (const auto& p : ps.paths()) {
    bool keep = false;
    for (const auto& t : trainable) keep = keep || nn::path_has_prefix(p, t);
    if (!keep) out.push_back(p);
  }
  return out;
}

std::vector<std::string> frozen_matching(const nn::ParameterSet& ps, const std::vector<std::string>& prefixes,
                                         bool with_backbone_base) {
  std::vector<std::string> out;
  for (const auto& p : ps.paths()) {
    bool hit = with_backbone_base && is_backbone_base(p);
    for (const auto& f : prefixes) hit = hit || nn::path_has_prefix(p, f);
    if (hit) out.push_back(p);
  }
  return out;
}

std::optional<world::ObjectRef> slot_ref(const world::RawObservation& o, std::size_t slot) {
  const double* g = o.geometry.data() + slot * world::kGeometryDims;
  if (!(g[3] > 0.0)) return std::nullopt;
  world::ObjectRef ref;
  for (std::size_t c = 0; c < world::kColorCount; ++c)
    if (g[7 + c] > 0.5) ref.color = static_cast<world::Color>(c);
  for (std::size_t s = 0; s < world::kShapeCount; ++s)
    if (g[7 + world::kColorCount + s] > 0.5) ref.shape = static_cast<world::Shape>(s);
  return ref;
}

}  // namespace

std::vector<StageConfig> stage_configs(int stage, const Model& m) {
  const auto& ps = m.params;
  const auto& cfg = m.cfg;
  std::vector<StageConfig> out;
  if (stage == 0) {
    StageConfig s;
    s.stage = 0;
    s.phase = "0";
    s.kind = StageKind::Pretrain;
    s.frozen = frozen_matching(ps, {"planner.vision", "planner.geometry.encoder", "expert"}, false);
    s.vlm_weights = {cfg.loss.language, cfg.loss.spatial, cfg.loss.temporal};
    s.budget = cfg.train.stage0;
    s.horizon = cfg.planner.horizon;
    out.push_back(s);
  } else if (stage == 1) {
    StageConfig s;
    s.stage = 1;
    s.phase = "1";
    s.kind = StageKind::Grounding;
    s.frozen = frozen_except(ps, {"planner.geometry.adapter", "planner.fusion", "planner.query.spatial",
                                  "planner.head.spatial"});
    s.vlm_weights = {0.0, 1.0, 0.0};
    s.budget = cfg.train.stage1;
    s.horizon = 1;
    out.push_back(s);
  } else if (stage == 2) {
    StageConfig a;
    a.stage = 2;
    a.phase = "2a";
    a.kind = StageKind::Planning;
    a.frozen = frozen_matching(ps,
                               {"planner.vision", "planner.geometry.encoder", "planner.query.temporal",
                                "planner.head.temporal", "expert"},
                               true);
    a.vlm_weights = {cfg.loss.language, cfg.loss.spatial, 0.0};
    a.lambda_vlm = cfg.loss.vlm;
    a.budget = cfg.train.stage2a;
    a.horizon = cfg.planner.horizon;
    StageConfig b = a;
    b.phase = "2b";
    b.frozen = frozen_matching(ps, {"planner.vision", "planner.geometry.encoder", "expert"}, true);
    b.vlm_weights.temporal = cfg.loss.temporal;
    b.budget = cfg.train.stage2b;
    out.push_back(a);
    out.push_back(b);
  } else if (stage == 3) {
    StageConfig s;
    s.stage = 3;
    s.phase = "3";
    s.kind = StageKind::Joint;
    s.frozen = frozen_matching(ps, {"planner.vision", "planner.geometry.encoder", "planner.fusion", "planner.query"},
                               true);
    s.vlm_weights = {cfg.loss.language, cfg.loss.spatial, cfg.loss.temporal};
    s.lambda_vlm = cfg.expert.conditioning == ae::Conditioning::Instruction ? 0.0 : cfg.loss.vlm;
    s.lambda_ae = cfg.loss.ae;
    s.budget = cfg.train.stage3;
    s.horizon = cfg.planner.horizon;
    out.push_back(s);
  } else {
    throw std::invalid_argument("stage must be 0, 1, 2 or 3");
  }
  return out;
}

GroundingSample draw_grounding(const std::vector<world::EpisodeRecord>& data, std::size_t frames, std::size_t stride,
                               nn::Rng& rng) {
  const auto& r = data[rng.index(data.size())];
  const std::size_t t = rng.index(r.observations.size());
  const auto& o = r.observations[t];
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i * world::kGeometryDims < o.geometry.size(); ++i)
    if (slot_ref(o, i)) slots.push_back(i);
  if (slots.empty()) throw std::invalid_argument("grounding: observation without objects");
  const std::size_t slot = slots[rng.index(slots.size())];
  const double* g = o.geometry.data() + slot * world::kGeometryDims;
  GroundingSample s;
  s.window = vlm::observation_window(r.observations, t, frames, stride);
  s.instruction = world::locate_instruction(*slot_ref(o, slot));
  s.box = world::Box{{g[0], g[1], g[2]}, {g[3], g[4], g[5]}};
  return s;
}

PlanningSample draw_planning(const std::vector<world::EpisodeRecord>& data, nn::Rng& rng) {
  PlanningSample s;
  s.record = &data[rng.index(data.size())];
  if (s.record->subtasks.empty()) throw std::invalid_argument("planning: record without sub-task annotations");
  s.subtask = rng.index(s.record->subtasks.size());
  const auto& a = s.record->subtasks[s.subtask];
  s.step = a.segment_end > a.segment_begin ? a.segment_begin + rng.index(a.segment_end - a.segment_begin)
                                           : a.segment_begin;
  return s;
}

std::vector<std::vector<int>> history_before(const world::EpisodeRecord& r, std::size_t subtask) {
  std::vector<std::vector<int>> h;
  for (std::size_t i = 0; i < subtask && i < r.subtasks.size(); ++i) h.push_back(r.subtasks[i].description);
  return h;
}

std::vector<world::ActionStep> target_chunk(const world::EpisodeRecord& r, std::size_t step, std::size_t H) {
  if (r.actions.empty()) throw std::invalid_argument("target_chunk: record without actions");
  std::vector<world::ActionStep> out;
  for (std::size_t i = 0; i < H; ++i) {
    if (step + i < r.actions.size()) {
      out.push_back(r.actions[step + i]);
    } else {
      const auto& last = r.actions.back();
      out.push_back({{0.0, 0.0, 0.0}, 0.0, last.g, last.dt});
    }
  }
  return out;
}

ae::Condition training_condition(const vlm::Observation4D& obs, const vlm::PromptOutput* prompt,
                                 const world::EpisodeRecord& r, const PlanningSample& s) {
  const auto& a = r.subtasks[s.subtask];
  ae::Condition c;
  c.frame = ae::latest_frame(obs);
  if (prompt) {
    c.semantic = prompt->semantic;
    c.spatial = prompt->spatial;
    c.temporal = prompt->temporal;
  }
  c.box = a.box;
  c.duration = a.duration;
  c.elapsed = r.observations[s.step].t - r.observations[a.segment_begin].t;
  c.proprio = r.observations[s.step].proprio;
  c.instruction = r.spec.instruction;
  return c;
}

void fit_action_normalization(ae::ActionExpert& expert, const std::vector<world::EpisodeRecord>& data) {
  std::vector<world::ActionStep> all;
  for (const auto& r : data) all.insert(all.end(), r.actions.begin(), r.actions.end());
  const auto [mean, scale] = ae::action_statistics(all);
  expert.set_normalization(mean, scale);
}

std::vector<double> smooth(const std::vector<double>& v, std::size_t window) {
  if (window == 0) throw std::invalid_argument("smooth: window must be >= 1");
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= window) acc -= v[i - window];
    out.push_back(acc / static_cast<double>(std::min(i + 1, window)));
  }
  return out;
}

StageResult run_stage(Model& m, const StageConfig& st, const std::vector<world::EpisodeRecord>& data,
                      const LossLogger& log) {
  if (data.empty()) throw std::invalid_argument("run_stage: empty dataset");
  for (const auto& r : data)
    if (r.observations.size() != r.actions.size() + 1)
      throw std::invalid_argument("run_stage: record " + std::to_string(r.index) + " has mismatched observations");
  for (const auto& p : st.frozen)
    if (!m.params.contains(p)) throw std::invalid_argument("run_stage: unknown frozen path " + p);

  const auto t0 = std::chrono::steady_clock::now();
  auto& ps = m.params;
  const auto& pc = m.cfg.planner;
  if (st.kind == StageKind::Joint) fit_action_normalization(*m.expert, data);
  ps.unfreeze_all();
  if (!st.frozen.empty()) ps.freeze(st.frozen);
  ps.zero_grad();

  StageResult res;
  res.phase = st.phase;
  res.frozen = st.frozen.size();
  res.trainable = ps.trainable_paths().size();
  res.frozen_hash_before = ps.hash(st.frozen);

  nn::AdamW opt(st.budget.lr, m.cfg.train.weight_decay);
  std::uint64_t phase_id = static_cast<std::uint64_t>(st.stage) * 16;
  for (char ch : st.phase) phase_id = phase_id * 31 + static_cast<unsigned char>(ch);
  nn::Rng rng(nn::mix_seed(m.cfg.train.seed, phase_id));
  const double inv_b = 1.0 / static_cast<double>(st.budget.batch);

  for (std::size_t step = 0; step < st.budget.steps; ++step) {
    LossPoint pt;
    pt.step = step;
    for (std::size_t b = 0; b < st.budget.batch; ++b) {
      Var loss;
      const bool grounding =
          st.kind == StageKind::Grounding || (st.kind == StageKind::Pretrain && rng.uniform() < 0.5);
      if (grounding) {
        const auto g = draw_grounding(data, pc.frames(), pc.window_stride, rng);
        const auto out = m.planner->forward(m.planner->encode_4d(g.window), g.instruction, {}, 1);
        const auto box = g.box.flat();
        const Var l1 = nn::l1_loss(out.prompts[0].box, Tensor({1, 6}, std::vector<double>(box.begin(), box.end())));
        loss = nn::scale(l1, st.vlm_weights.spatial);
        pt.spatial += l1.value().item() * inv_b;
      } else {
        const auto s = draw_planning(data, rng);
        const auto& r = *s.record;
        const auto obs = m.planner->encode_4d(vlm::observation_window(r.observations, s.step, pc.frames(), pc.window_stride));
        const bool use_vlm = st.lambda_vlm > 0.0;
        vlm::PlannerOutput out;
        if (use_vlm || m.cfg.expert.conditioning == ae::Conditioning::Prompt)
          out = m.planner->forward(obs, r.spec.instruction, history_before(r, s.subtask), st.horizon);
        if (use_vlm) {
          const auto vl = vlm::vlm_loss(out.prompts, vlm::prompt_targets(r.subtasks, s.subtask, st.horizon),
                                        st.vlm_weights);
          loss = nn::scale(vl.total, st.lambda_vlm);
          pt.language += vl.language * inv_b;
          pt.spatial += vl.spatial * inv_b;
          pt.temporal += vl.temporal * inv_b;
        }
        if (st.kind == StageKind::Joint) {
          const auto c = training_condition(obs, out.prompts.empty() ? nullptr : &out.prompts[0], r, s);
          const Tensor a_star = m.expert->normalize(target_chunk(r, s.step, m.cfg.expert.horizon));
          const std::size_t draws = m.cfg.train.fm_draws;
          Var l_ae;
          for (std::size_t d = 0; d < draws; ++d) {
            const double tau = rng.uniform();
            const Tensor omega = rng.normal_tensor(a_star.shape());
            const Var l = m.expert->training_loss(c, a_star, tau, omega);
            l_ae = l_ae.defined() ? nn::add(l_ae, l) : l;
          }
          if (draws > 1) l_ae = nn::scale(l_ae, 1.0 / static_cast<double>(draws));
          pt.ae += l_ae.value().item() * inv_b;
          const Var w_ae = nn::scale(l_ae, st.lambda_ae);
          loss = loss.defined() ? nn::add(loss, w_ae) : w_ae;
        }
      }
      pt.total += loss.value().item() * inv_b;
      nn::backward(nn::scale(loss, inv_b));
    }
    opt.step(ps);
    ps.zero_grad();
    res.curve.push_back(pt);
    if (log && (step % std::max<std::size_t>(m.cfg.train.log_every, 1) == 0 || step + 1 == st.budget.steps))
      log(st.phase, pt);
  }
  ps.unfreeze_all();
  res.frozen_hash_after = ps.hash(st.frozen);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!res.freeze_ok()) throw FreezeViolation("stage " + st.phase + ": frozen parameters changed");
  return res;
}

std::vector<StageResult> train_stage(Model& m, int stage, const std::vector<world::EpisodeRecord>& data,
                                     const LossLogger& log) {
  std::vector<StageResult> out;
  for (const auto& st : stage_configs(stage, m)) out.push_back(run_stage(m, st, data, log));
  return out;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<StageResult>& results) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "phase,step,total,language,spatial,temporal,ae\n" << std::setprecision(10);
  for (const auto& r : results)
    for (const auto& p : r.curve)
      out << r.phase << ',' << p.step << ',' << p.total << ',' << p.language << ',' << p.spatial << ',' << p.temporal
          << ',' << p.ae << '\n';
}

}  // namespace stpi::harness
