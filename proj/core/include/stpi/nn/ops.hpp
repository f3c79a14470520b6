#pragma once

#include <cstddef>
#include <vector>

#include "stpi/nn/autodiff.hpp"
#include "stpi/nn/mask.hpp"

namespace stpi::nn {

// Differentiable operations. Matrices are row-major (rows x cols); all
// reductions run left to right in index order so results are reproducible
// bit for bit.

Var matmul(const Var& a, const Var& b);
// x (n x in) * w (in x out) + bias (out), bias broadcast over rows.
Var linear(const Var& x, const Var& w, const Var& bias);
Var linear(const Var& x, const Var& w);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// x (n x c) plus a row vector of length c on every row.
Var add_row(const Var& x, const Var& row);

Var gelu(const Var& x);
Var softplus(const Var& x);
Var tanh(const Var& x);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Multi-head scaled dot-product attention. Disallowed keys are excluded from
// the softmax normalisation entirely, so output row i depends only on the
// keys its mask row allows.
Var masked_attention(const Var& q, const Var& k, const Var& v, const AttentionMask& mask, std::size_t heads);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var reshape(const Var& x, Shape shape);
// Embedding lookup: one row of `table` per index.
Var gather_rows(const Var& table, const std::vector<std::size_t>& indices);

Var sum(const Var& x);
Var mean(const Var& x);

// Sum over rows of weight[i] * (-log softmax(logits[i])[target[i]]). Rows with
// weight 0 contribute neither loss nor gradient.
Var cross_entropy(const Var& logits, const std::vector<std::size_t>& targets, const std::vector<double>& weights);
// Sum of absolute differences.
Var l1_loss(const Var& pred, const Tensor& target);
// Mean of squared differences.
Var mse_loss(const Var& pred, const Tensor& target);

}  // namespace stpi::nn
