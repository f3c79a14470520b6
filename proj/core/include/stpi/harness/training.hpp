#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stpi/ae/expert.hpp"
#include "stpi/harness/config.hpp"
#include "stpi/harness/model.hpp"
#include "stpi/vlm/loss.hpp"
#include "stpi/world/dataset.hpp"

namespace stpi::harness {

enum class StageKind { Pretrain, Grounding, Planning, Joint };

struct StageConfig {
  int stage = 1;
  std::string phase;  // "0", "1", "2a", "2b", "3"
  StageKind kind = StageKind::Grounding;
  std::vector<std::string> frozen;  // full parameter paths
  vlm::VlmWeights vlm_weights;
  double lambda_vlm = 1.0;
  double lambda_ae = 0.0;
  StageBudget budget;
  std::size_t horizon = 1;  // prompts supervised per sample
};

// Frozen sets follow the stage schedule:
//   0   vision, geometry encoder, expert (stands in for a pretrained backbone;
//       half grounding samples, half planning samples)
//   1   everything except geometry adapter, fusion, spatial query and head
//   2a  vision, geometry encoder, backbone base weights, temporal query/head, expert
//   2b  as 2a with the temporal query/head released
//   3   vision, geometry encoder, fusion, prompt queries, backbone base weights
std::vector<StageConfig> stage_configs(int stage, const Model& m);

struct LossPoint {
  std::size_t step = 0;
  double total = 0.0;
  double language = 0.0;
  double spatial = 0.0;
  double temporal = 0.0;
  double ae = 0.0;
};

struct StageResult {
  std::string phase;
  std::vector<LossPoint> curve;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  double seconds = 0.0;

  bool freeze_ok() const { return frozen_hash_before == frozen_hash_after; }
};

class FreezeViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using LossLogger = std::function<void(const std::string& phase, const LossPoint&)>;

// Trains the unfrozen parameters for one phase. Throws std::invalid_argument
// when the dataset lacks what the stage needs and FreezeViolation when a
// frozen parameter changed.
StageResult run_stage(Model& m, const StageConfig& stage, const std::vector<world::EpisodeRecord>& data,
                      const LossLogger& log = {});
std::vector<StageResult> train_stage(Model& m, int stage, const std::vector<world::EpisodeRecord>& data,
                                     const LossLogger& log = {});

void write_loss_curve(const std::filesystem::path& path, const std::vector<StageResult>& results);

// Moving average over a trailing window, used for loss-trend checks.
std::vector<double> smooth(const std::vector<double>& values, std::size_t window);

// --- sample construction, exposed for tests ---

struct GroundingSample {
  std::vector<world::RawObservation> window;
  std::vector<int> instruction;
  world::Box box;
};

struct PlanningSample {
  const world::EpisodeRecord* record = nullptr;
  std::size_t subtask = 0;
  std::size_t step = 0;
};

GroundingSample draw_grounding(const std::vector<world::EpisodeRecord>& data, std::size_t frames, std::size_t stride,
                               nn::Rng& rng);
PlanningSample draw_planning(const std::vector<world::EpisodeRecord>& data, nn::Rng& rng);
std::vector<std::vector<int>> history_before(const world::EpisodeRecord& r, std::size_t subtask);
// Actions [step, step + H), padded past the episode end by holding still.
std::vector<world::ActionStep> target_chunk(const world::EpisodeRecord& r, std::size_t step, std::size_t H);
// Conditioning for the expert from planner outputs at one sample, using the
// annotated box and duration.
ae::Condition training_condition(const vlm::Observation4D& obs, const vlm::PromptOutput* prompt,
                                 const world::EpisodeRecord& r, const PlanningSample& s);
void fit_action_normalization(ae::ActionExpert& expert, const std::vector<world::EpisodeRecord>& data);

}  // namespace stpi::harness
