#pragma once

// Randomised small instances of every differentiable block, shared by the unit
// tests and the acceptance gradient suite.

#include <functional>
#include <string>
#include <vector>

#include "stpi/nn/layers.hpp"
#include "stpi/nn/ops.hpp"
#include "stpi/nn/random.hpp"

namespace stpi::testing {

struct BlockInstance {
  std::vector<nn::Var> leaves;
  std::function<nn::Var()> loss;
};

struct BlockFactory {
  std::string name;
  std::function<BlockInstance(nn::Rng&)> make;
};

inline nn::Var leaf(nn::Rng& rng, nn::Shape shape, double scale = 1.0) {
  return nn::Var(rng.normal_tensor(shape, scale), true);
}

// Random linear functional of an output, so every output entry is exercised.
inline nn::Var project(const nn::Var& y, nn::Rng& rng) {
  nn::Var w(rng.normal_tensor(y.shape()), false);
  return nn::sum(nn::mul(y, w));
}

inline nn::AttentionMask random_mask(nn::Rng& rng, std::size_t q, std::size_t k) {
  nn::AttentionMask m(q, k, false);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < k; ++j) m.set(i, j, rng.uniform() < 0.6);
    m.set(i, rng.index(k));
  }
  return m;
}

inline std::vector<BlockFactory> block_factories() {
  std::vector<BlockFactory> out;
  out.push_back({"linear", [](nn::Rng& rng) {
                   const std::size_t n = 1 + rng.index(4), in = 2 + rng.index(4), o = 1 + rng.index(5);
                   auto x = leaf(rng, {n, in}), w = leaf(rng, {in, o}), b = leaf(rng, {o});
                   auto p = nn::Var(rng.normal_tensor({n, o}), false);
                   return BlockInstance{{x, w, b}, [=] { return nn::sum(nn::mul(nn::linear(x, w, b), p)); }};
                 }});
  out.push_back({"matmul", [](nn::Rng& rng) {
                   const std::size_t n = 1 + rng.index(4), k = 1 + rng.index(4), m = 1 + rng.index(4);
                   auto a = leaf(rng, {n, k}), b = leaf(rng, {k, m});
                   auto p = nn::Var(rng.normal_tensor({n, m}), false);
                   return BlockInstance{{a, b}, [=] { return nn::sum(nn::mul(nn::matmul(a, b), p)); }};
                 }});
  out.push_back({"layer_norm", [](nn::Rng& rng) {
                   const std::size_t n = 1 + rng.index(3), c = 2 + rng.index(5);
                   auto x = leaf(rng, {n, c}), g = leaf(rng, {c}), b = leaf(rng, {c});
                   auto p = nn::Var(rng.normal_tensor({n, c}), false);
                   return BlockInstance{{x, g, b}, [=] { return nn::sum(nn::mul(nn::layer_norm(x, g, b), p)); }};
                 }});
  out.push_back({"gelu", [](nn::Rng& rng) {
                   auto x = leaf(rng, {2 + rng.index(3), 3});
                   auto p = nn::Var(rng.normal_tensor(x.shape()), false);
                   return BlockInstance{{x}, [=] { return nn::sum(nn::mul(nn::gelu(x), p)); }};
                 }});
  out.push_back({"softplus_tanh", [](nn::Rng& rng) {
                   auto x = leaf(rng, {2, 2 + rng.index(3)});
                   auto p = nn::Var(rng.normal_tensor(x.shape()), false);
                   return BlockInstance{{x}, [=] { return nn::sum(nn::mul(nn::tanh(nn::softplus(x)), p)); }};
                 }});
  out.push_back({"masked_attention", [](nn::Rng& rng) {
                   const std::size_t heads = 1 + rng.index(2), d = heads * (1 + rng.index(3));
                   const std::size_t nq = 1 + rng.index(4), nk = 1 + rng.index(4);
                   auto q = leaf(rng, {nq, d}), k = leaf(rng, {nk, d}), v = leaf(rng, {nk, d});
                   const nn::AttentionMask m = random_mask(rng, nq, nk);
                   auto p = nn::Var(rng.normal_tensor({nq, d}), false);
                   return BlockInstance{{q, k, v},
                                        [=] { return nn::sum(nn::mul(nn::masked_attention(q, k, v, m, heads), p)); }};
                 }});
  out.push_back({"transformer_block", [](nn::Rng& rng) {
                   nn::ParameterSet ps;
                   const std::size_t heads = 2, d = 4, n = 2 + rng.index(3);
                   auto block = nn::TransformerBlock::create(ps, "blk", d, heads, 2, rng);
                   auto x = leaf(rng, {n, d});
                   const nn::AttentionMask m = random_mask(rng, n, n);
                   auto p = nn::Var(rng.normal_tensor({n, d}), false);
                   std::vector<nn::Var> leaves{x};
                   for (const auto& [_, v] : ps.entries()) leaves.push_back(v);
                   return BlockInstance{leaves, [=] { return nn::sum(nn::mul(block(x, m), p)); }};
                 }});
  out.push_back({"lora_linear", [](nn::Rng& rng) {
                   nn::ParameterSet ps;
                   auto base = nn::Linear::create(ps, "l", 4, 3, rng);
                   base.attach_lora(ps, "l", 2, rng);
                   // non-zero up so both adapter factors carry gradient
                   ps.at("l.lora.up").mutable_value() = rng.normal_tensor({2, 3});
                   auto x = leaf(rng, {1 + rng.index(3), 4});
                   auto p = nn::Var(rng.normal_tensor({x.rows(), 3}), false);
                   std::vector<nn::Var> leaves{x};
                   for (const auto& [_, v] : ps.entries()) leaves.push_back(v);
                   return BlockInstance{leaves, [=] { return nn::sum(nn::mul(base(x), p)); }};
                 }});
  out.push_back({"concat_slice_gather", [](nn::Rng& rng) {
                   auto table = leaf(rng, {5, 3});
                   auto a = leaf(rng, {2, 3});
                   auto b = leaf(rng, {2, 2});
                   std::vector<std::size_t> idx{rng.index(5), rng.index(5), rng.index(5), rng.index(5)};
                   auto p = nn::Var(rng.normal_tensor({2, 5}), false);
                   return BlockInstance{{table, a, b}, [=] {
                                          auto rows = nn::concat_rows({nn::gather_rows(table, idx), a});
                                          auto mid = nn::slice_rows(rows, 3, 5);
                                          return nn::sum(nn::mul(nn::concat_cols({mid, b}), p));
                                        }};
                 }});
  out.push_back({"cross_entropy", [](nn::Rng& rng) {
                   const std::size_t n = 1 + rng.index(4), v = 2 + rng.index(4);
                   auto logits = leaf(rng, {n, v});
                   std::vector<std::size_t> t(n);
                   std::vector<double> w(n);
                   for (std::size_t i = 0; i < n; ++i) {
                     t[i] = rng.index(v);
                     w[i] = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.5, 2.0);
                   }
                   return BlockInstance{{logits}, [=] { return nn::cross_entropy(logits, t, w); }};
                 }});
  out.push_back({"regression_losses", [](nn::Rng& rng) {
                   auto x = leaf(rng, {2, 3});
                   nn::Tensor target = rng.normal_tensor({2, 3});
                   // keep residuals away from the L1 kink
                   for (std::size_t i = 0; i < target.size(); ++i) {
                     const double d = x.value()[i] - target[i];
                     if (std::abs(d) < 0.05) target[i] -= 0.1;
                   }
                   return BlockInstance{{x}, [=] {
                                          return nn::add(nn::scale(nn::l1_loss(x, target), 0.7),
                                                         nn::mse_loss(nn::add_row(x, nn::Var(nn::Tensor({3}, 0.1))),
                                                                      target));
                                        }};
                 }});
  return out;
}

}  // namespace stpi::testing
