#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stpi/nn/params.hpp"

namespace stpi::nn {

struct OptimState {
  std::vector<Tensor> first;
  std::vector<Tensor> second;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam step with decoupled weight decay:
//   p <- p - lr * wd * p - lr * mhat / (sqrt(vhat) + eps)
// Moment slots are created on the first call. Throws std::invalid_argument on
// shape or count mismatch and NonFiniteError on a non-finite gradient.
void adamw_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, OptimState& state);

// AdamW over the trainable entries of a ParameterSet. Entries without a
// gradient this step are left untouched.
class AdamW {
 public:
  AdamW(double lr, double weight_decay) {
    state_.lr = lr;
    state_.weight_decay = weight_decay;
  }

  void step(ParameterSet& params);
  const OptimState& state() const { return state_; }
  void set_lr(double lr) { state_.lr = lr; }

 private:
  OptimState state_;
  std::map<std::string, std::size_t> slots_;
  std::vector<std::uint64_t> slot_steps_;
};

}  // namespace stpi::nn
