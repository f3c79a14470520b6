#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stpi/ae/expert.hpp"
#include "stpi/harness/config.hpp"
#include "stpi/nn/params.hpp"
#include "stpi/vlm/planner.hpp"

namespace stpi::harness {

// Planner and action expert over one parameter registry. The planner is built
// first, so expert-only config changes leave planner initialisation unchanged.
struct Model {
  explicit Model(const PipelineConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  PipelineConfig cfg;
  nn::ParameterSet params;
  std::unique_ptr<vlm::Planner> planner;
  std::unique_ptr<ae::ActionExpert> expert;
};

void save_model(const Model& m, const std::filesystem::path& file);
// Rebuilds the model from the checkpoint's config text, then loads tensors.
std::unique_ptr<Model> load_model(const std::filesystem::path& file);
// Loads into an existing model; throws std::runtime_error when the checkpoint
// was written for a different architecture.
void load_weights(Model& m, const std::filesystem::path& file);

// Value snapshot of every entry whose path starts with `prefix`.
std::map<std::string, nn::Tensor> snapshot(const nn::ParameterSet& ps, const std::string& prefix);
void restore(nn::ParameterSet& ps, const std::map<std::string, nn::Tensor>& values);

}  // namespace stpi::harness
