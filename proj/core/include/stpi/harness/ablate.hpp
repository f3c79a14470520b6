#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stpi/harness/config.hpp"
#include "stpi/harness/metrics.hpp"
#include "stpi/harness/model.hpp"
#include "stpi/world/dataset.hpp"

namespace stpi::harness {

// The four ablation axes plus the generator-fusion study (spatial-only,
// temporal-only, fused).
enum class Axis { Framework, Attention, Modality, Granularity, Fusion };

std::string axis_name(Axis a);
std::optional<Axis> parse_axis(const std::string& s);

struct Variant {
  std::string name;
  PipelineConfig cfg;
};

std::vector<Variant> ablation_variants(Axis axis, const PipelineConfig& base);

struct AblationRow {
  std::string axis;
  std::string variant;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double completion_time = 0.0;
  TrajectoryMetrics metrics;  // mean over episodes with at least 4 poses
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  bool partial = false;  // not run: time budget exhausted
};

// Trains and evaluates variants on one dataset with shared seeds and budgets.
// Identical configurations are run once; stage 1-2 planner weights are reused
// across variants whose planner and stage 1-2 settings match.
class AblationRunner {
 public:
  using Logger = std::function<void(const std::string&)>;

  AblationRunner(std::vector<world::EpisodeRecord> data, double time_budget_seconds = 0.0, Logger log = {});

  AblationRow run(const std::string& axis, const Variant& v);
  std::vector<AblationRow> run_axis(Axis axis, const PipelineConfig& base);
  double elapsed_seconds() const;

 private:
  std::vector<world::EpisodeRecord> data_;
  double budget_;
  Logger log_;
  double spent_ = 0.0;
  std::map<std::string, AblationRow> results_;
  std::map<std::string, std::map<std::string, nn::Tensor>> planner_cache_;
};

std::string ablation_csv(const std::vector<AblationRow>& rows);

// Key identifying the stage 1-2 planner state a config produces.
std::string planner_stage_key(const PipelineConfig& cfg);

}  // namespace stpi::harness
