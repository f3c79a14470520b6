#include "stpi/harness/ablate.hpp"

#include <chrono>
#include <iomanip>
#include <sstream>

#include "stpi/harness/evaluate.hpp"
#include "stpi/harness/training.hpp"

namespace stpi::harness {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string axis_name(Axis a) {
  switch (a) {
    case Axis::Framework: return "framework";
    case Axis::Attention: return "attention";
    case Axis::Modality: return "modality";
    case Axis::Granularity: return "granularity";
    case Axis::Fusion: return "fusion";
  }
  return "?";
}

std::optional<Axis> parse_axis(const std::string& s) {
  for (Axis a : {Axis::Framework, Axis::Attention, Axis::Modality, Axis::Granularity, Axis::Fusion})
    if (axis_name(a) == s) return a;
  return std::nullopt;
}

std::vector<Variant> ablation_variants(Axis axis, const PipelineConfig& base) {
  std::vector<Variant> out;
  const auto add = [&](std::string name, const std::function<void(PipelineConfig&)>& edit) {
    PipelineConfig c = base;
    edit(c);
    c.sync();
    c.validate();
    out.push_back({std::move(name), c});
  };
  switch (axis) {
    case Axis::Framework:
      add("full", [](PipelineConfig& c) {
        c.expert.generator = ae::GeneratorMode::Dual;
        c.expert.conditioning = ae::Conditioning::Prompt;
      });
      add("-dual", [](PipelineConfig& c) {
        c.expert.generator = ae::GeneratorMode::Single;
        c.expert.conditioning = ae::Conditioning::Prompt;
      });
      add("-decomposition", [](PipelineConfig& c) {
        c.expert.generator = ae::GeneratorMode::Dual;
        c.expert.conditioning = ae::Conditioning::Instruction;
      });
      add("neither", [](PipelineConfig& c) {
        c.expert.generator = ae::GeneratorMode::Single;
        c.expert.conditioning = ae::Conditioning::Instruction;
      });
      break;
    case Axis::Attention:
      for (vlm::MaskMode m : {vlm::MaskMode::Causal, vlm::MaskMode::Bidirectional, vlm::MaskMode::None})
        add(vlm::mask_mode_name(m), [m](PipelineConfig& c) { c.planner.mask = m; });
      break;
    case Axis::Modality:
      for (vlm::Modality m : {vlm::Modality::Full4D, vlm::Modality::Geometry3D, vlm::Modality::Grid2D})
        add(vlm::modality_name(m), [m](PipelineConfig& c) { c.planner.modality = m; });
      break;
    case Axis::Granularity:
      for (std::size_t k = 1; k <= base.planner.max_horizon && k <= 4; ++k)
        add("K=" + std::to_string(k), [k](PipelineConfig& c) { c.planner.horizon = k; });
      break;
    case Axis::Fusion:
      for (ae::FusionMode f : {ae::FusionMode::Linear, ae::FusionMode::SpatialOnly, ae::FusionMode::TemporalOnly})
        add(ae::fusion_mode_name(f), [f](PipelineConfig& c) { c.expert.fusion = f; });
      break;
  }
  return out;
}

std::string planner_stage_key(const PipelineConfig& cfg) {
  std::istringstream in(config_to_text(cfg));
  std::string line, key;
  while (std::getline(in, line)) {
    if (line.rfind("expert.", 0) == 0 || line.rfind("stage3.", 0) == 0 || line.rfind("eval.", 0) == 0 ||
        line.rfind("loss.lambda_2", 0) == 0)
      continue;
    key += line + "\n";
  }
  return key;
}

AblationRunner::AblationRunner(std::vector<world::EpisodeRecord> data, double budget, Logger log)
    : data_(std::move(data)), budget_(budget), log_(std::move(log)) {}

double AblationRunner::elapsed_seconds() const { return spent_; }

AblationRow AblationRunner::run(const std::string& axis, const Variant& v) {
  const std::string key = config_to_text(v.cfg);
  if (auto it = results_.find(key); it != results_.end()) {
    AblationRow row = it->second;
    row.axis = axis;
    row.variant = v.name;
    return row;
  }
  AblationRow row;
  row.axis = axis;
  row.variant = v.name;
  if (budget_ > 0.0 && spent_ >= budget_) {
    row.partial = true;
    if (log_) log_(axis + "/" + v.name + ": skipped, budget exhausted");
    return row;
  }

  const auto t0 = std::chrono::steady_clock::now();
  Model m(v.cfg);
  const std::string pkey = planner_stage_key(v.cfg);
  const LossLogger quiet;
  if (auto it = planner_cache_.find(pkey); it != planner_cache_.end()) {
    restore(m.params, it->second);
  } else {
    if (v.cfg.train.stage0.steps) train_stage(m, 0, data_, quiet);
    train_stage(m, 1, data_, quiet);
    train_stage(m, 2, data_, quiet);
    planner_cache_.emplace(pkey, snapshot(m.params, "planner"));
  }
  train_stage(m, 3, data_, quiet);
  row.train_seconds = seconds_since(t0);

  const auto t1 = std::chrono::steady_clock::now();
  const auto report = evaluate(&m, PolicyKind::Model, v.cfg.eval);
  row.eval_seconds = seconds_since(t1);
  row.episodes = report.overall.episodes;
  row.successes = report.overall.successes;
  row.success_rate = report.overall.success_rate;
  row.completion_time = report.overall.completion_time;
  std::size_t counted = 0;
  for (const auto& e : report.episodes) {
    if (e.trajectory.size() < 3) continue;
    const auto tm = trajectory_metrics(e);
    row.metrics.path_length += tm.path_length;
    row.metrics.mean_jerk += tm.mean_jerk;
    row.metrics.velocity_variance += tm.velocity_variance;
    ++counted;
  }
  if (counted) {
    const double n = static_cast<double>(counted);
    row.metrics.path_length /= n;
    row.metrics.mean_jerk /= n;
    row.metrics.velocity_variance /= n;
  }
  spent_ += row.train_seconds + row.eval_seconds;
  if (log_) {
    std::ostringstream os;
    os << axis << "/" << v.name << ": SR " << row.success_rate << " CT " << row.completion_time << " (train "
       << std::fixed << std::setprecision(1) << row.train_seconds << "s, eval " << row.eval_seconds << "s)";
    log_(os.str());
  }
  results_.emplace(key, row);
  return row;
}

std::vector<AblationRow> AblationRunner::run_axis(Axis axis, const PipelineConfig& base) {
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants(axis, base)) rows.push_back(run(axis_name(axis), v));
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(10)
     << "axis,variant,episodes,successes,success_rate,completion_time,path_length,mean_jerk,velocity_variance,"
        "train_seconds,eval_seconds,partial\n";
  for (const auto& r : rows)
    os << r.axis << ',' << r.variant << ',' << r.episodes << ',' << r.successes << ',' << r.success_rate << ','
       << r.completion_time << ',' << r.metrics.path_length << ',' << r.metrics.mean_jerk << ','
       << r.metrics.velocity_variance << ',' << r.train_seconds << ',' << r.eval_seconds << ','
       << (r.partial ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace stpi::harness
