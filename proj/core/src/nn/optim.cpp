#include "stpi/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace stpi::nn {

namespace {

void update_one(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, std::uint64_t t, const OptimState& s) {
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= s.lr * s.weight_decay * p[i];
    p[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

}  // namespace

void adamw_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, OptimState& state) {
  if (params.size() != grads.size()) throw std::invalid_argument("adamw_step: params/grads count mismatch");
  if (!(state.lr > 0.0)) throw std::invalid_argument("adamw_step: learning rate must be positive");
  if (state.first.empty()) {
    for (const Tensor* p : params) {
      state.first.emplace_back(p->shape(), 0.0);
      state.second.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.first.size() != params.size()) throw std::invalid_argument("adamw_step: state slot count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || state.first[i].shape() != params[i]->shape()) {
      throw std::invalid_argument("adamw_step: shape mismatch at slot " + std::to_string(i));
    }
    if (!all_finite(*grads[i])) throw NonFiniteError("adamw_step: non-finite gradient at slot " + std::to_string(i));
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    update_one(*params[i], *grads[i], state.first[i], state.second[i], state.step, state);
  }
}

void AdamW::step(ParameterSet& params) {
  if (!(state_.lr > 0.0)) throw std::invalid_argument("AdamW: learning rate must be positive");
  for (auto& [path, var] : params.entries()) {
    if (!var.requires_grad() || !var.has_grad()) continue;
    if (!all_finite(var.grad())) throw NonFiniteError("AdamW: non-finite gradient for " + path);
  }
  ++state_.step;
  for (auto& [path, var] : params.entries()) {
    if (!var.requires_grad() || !var.has_grad()) continue;
    auto [it, inserted] = slots_.try_emplace(path, state_.first.size());
    if (inserted) {
      state_.first.emplace_back(var.shape(), 0.0);
      state_.second.emplace_back(var.shape(), 0.0);
      slot_steps_.push_back(0);
    }
    const std::size_t slot = it->second;
    Var handle = var;
    update_one(handle.mutable_value(), var.grad(), state_.first[slot], state_.second[slot], ++slot_steps_[slot],
               state_);
  }
}

}  // namespace stpi::nn
