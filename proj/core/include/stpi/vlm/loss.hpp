#pragma once

#include <optional>
#include <vector>

#include "stpi/nn/autodiff.hpp"
#include "stpi/vlm/planner.hpp"
#include "stpi/world/types.hpp"

namespace stpi::vlm {

struct VlmWeights {
  double language = 1.0;  // lambda_L
  double spatial = 5.0;   // lambda_s
  double temporal = 5.0;  // lambda_tau
};

// Ground truth for one prompt slot. "done" slots carry only a description.
struct PromptTarget {
  std::vector<int> description;
  std::optional<world::Box> box;
  std::optional<double> duration;
};

struct VlmLoss {
  nn::Var total;
  double language = 0.0;
  double spatial = 0.0;
  double temporal = 0.0;
  std::size_t paired = 0;
  bool truncated = false;  // prediction and target counts differed
};

// lambda_L * CE + lambda_s * L1(box) + lambda_tau * L1(duration), summed over
// the paired prompt slots. CE is averaged over the description's tokens up to
// and including eos.
VlmLoss vlm_loss(const std::vector<PromptOutput>& predicted, const std::vector<PromptTarget>& targets,
                 const VlmWeights& w);

// Targets for slots k..k+K-1 of an annotated episode; slots past the end get
// the "done" prompt.
std::vector<PromptTarget> prompt_targets(const std::vector<world::SubTaskAnnotation>& subtasks, std::size_t k,
                                         std::size_t K);

}  // namespace stpi::vlm
