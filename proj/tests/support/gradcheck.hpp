#pragma once

// Central finite-difference oracle for reverse-mode gradients. Independent of
// the backward pass: it only ever calls the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "stpi/nn/autodiff.hpp"

namespace stpi::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// `loss_fn` rebuilds the scalar loss from the current leaf values. Relative
// error is measured per leaf tensor as ||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
// The floor keeps exactly-zero gradients (e.g. a key bias under softmax) from
// turning rounding noise into a relative error of 1. Steps much below 1e-4
// lose digits to cancellation on the larger composite blocks.
inline GradCheckResult gradcheck(std::vector<nn::Var> leaves, const std::function<nn::Var()>& loss_fn,
                                 double step = 1e-4, double floor = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  nn::Var loss = loss_fn();
  nn::backward(loss);
  GradCheckResult result;
  for (auto& leaf : leaves) {
    const nn::Tensor analytic = leaf.has_grad() ? leaf.grad() : nn::Tensor(leaf.shape(), 0.0);
    nn::Tensor numeric(leaf.shape(), 0.0);
    for (std::size_t i = 0; i < leaf.value().size(); ++i) {
      const double saved = leaf.value()[i];
      leaf.mutable_value()[i] = saved + step;
      const double up = loss_fn().value().item();
      leaf.mutable_value()[i] = saved - step;
      const double down = loss_fn().value().item();
      leaf.mutable_value()[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    double diff = 0.0, na = 0.0, nn_ = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn_ += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn_), floor});
    result.max_relative_error = std::max(result.max_relative_error, std::sqrt(diff) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace stpi::testing
