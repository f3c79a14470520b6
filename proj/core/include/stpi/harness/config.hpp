#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stpi/ae/expert.hpp"
#include "stpi/nn/autodiff.hpp"
#include "stpi/vlm/planner.hpp"
#include "stpi/world/dataset.hpp"

namespace stpi::harness {

struct LossWeights {
  double language = 1.0;  // lambda_L
  double spatial = 5.0;   // lambda_s
  double temporal = 5.0;  // lambda_tau
  double vlm = 1.0;       // lambda_1
  double ae = 10.0;       // lambda_2

  void validate() const;
};

// lambda_1 * l_vlm + lambda_2 * l_ae. Throws nn::NonFiniteError on a
// non-finite component.
double total_loss(double l_vlm, double l_ae, const LossWeights& w);
nn::Var total_loss(const nn::Var& l_vlm, const nn::Var& l_ae, const LossWeights& w);

struct StageBudget {
  double lr = 1e-5;
  std::size_t batch = 32;
  std::size_t steps = 100;
};

struct TrainConfig {
  StageBudget stage0{1e-3, 16, 0};  // backbone pretraining; 0 steps skips it
  StageBudget stage1{2e-5, 64, 100};
  StageBudget stage2a{1e-5, 32, 200};  // language phase, temporal parts frozen
  StageBudget stage2b{1e-5, 32, 200};  // temporal parts unfrozen
  StageBudget stage3{1e-5, 32, 300};
  double weight_decay = 0.0;
  std::size_t log_every = 10;
  std::size_t fm_draws = 1;  // (tau, noise) draws per joint-stage sample
  std::uint64_t seed = 11;
};

struct EvalConfig {
  std::size_t episodes = 50;
  std::uint64_t seed = 9001;
  std::string suite = "mixed";
  std::size_t max_steps = 400;
  double max_time = 60.0;
  std::size_t replan_cap = 12;
  double beta = 2.0;
  std::size_t execute_steps = 0;  // actions run per sampled chunk; 0: the whole chunk
  std::size_t workers = 0;  // 0: hardware concurrency
};

struct PipelineConfig {
  std::uint64_t seed = 1;  // parameter initialisation
  world::DatasetConfig data;
  vlm::PlannerConfig planner;
  ae::ExpertConfig expert;
  LossWeights loss;
  TrainConfig train;
  EvalConfig eval;

  // Copies planner dimensions the expert depends on.
  void sync();
  void validate() const;
};

// Every documented key with its current value, one "key = value" per line in
// a fixed order.
std::string config_to_text(const PipelineConfig& cfg);
// Applies "key = value" lines over `base`. '#' starts a comment. Unknown keys
// and malformed values throw std::invalid_argument naming the line.
PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});
void apply_override(PipelineConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

}  // namespace stpi::harness
