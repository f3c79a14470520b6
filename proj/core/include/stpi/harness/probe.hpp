#pragma once

#include <cstdint>
#include <vector>

#include "stpi/harness/model.hpp"
#include "stpi/world/dataset.hpp"

namespace stpi::harness {

// Teacher-forced planner scores at each sub-task start: first predicted
// prompt against the annotation, with the true history.
struct PlannerScores {
  std::size_t prompts = 0;
  double token_accuracy = 0.0;     // over description positions up to and including eos
  double exact_match = 0.0;        // whole description correct
  double position_error = 0.0;     // mean Euclidean error of the box centre, metres
  double duration_error = 0.0;     // mean |duration - annotation|, seconds
};

PlannerScores probe_planner(const Model& m, const std::vector<world::EpisodeRecord>& data);

// Expert chunk error on annotated samples: mean |sampled - target| in
// normalized units, conditioning built as in joint training.
struct ExpertScores {
  std::size_t chunks = 0;
  double chunk_error = 0.0;
  double position_error = 0.0;  // mean per-step |dx - dx*|, metres
};

ExpertScores probe_expert(const Model& m, const std::vector<world::EpisodeRecord>& data, std::size_t samples,
                          std::uint64_t seed);

}  // namespace stpi::harness
