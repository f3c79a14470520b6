#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "stpi/nn/mask.hpp"
#include "stpi/nn/ops.hpp"
#include "stpi/nn/params.hpp"
#include "stpi/nn/random.hpp"

namespace stpi::nn {

// Low-rank residual on a frozen linear map: out = base(x) + (x * down) * up.
// `up` starts at zero so a fresh adapter leaves the base output unchanged.
struct LoraAdapter {
  std::size_t rank = 0;
  Var down;  // in x rank
  Var up;    // rank x out
};

struct Linear {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Var weight;  // in x out
  Var bias;    // out
  std::optional<LoraAdapter> lora;

  static Linear create(ParameterSet& params, const std::string& path, std::size_t in, std::size_t out, Rng& rng,
                       double gain = 1.0);

  // Registers `<path>.lora.{down,up}`; throws if rank >= min(in, out).
  void attach_lora(ParameterSet& params, const std::string& path, std::size_t rank, Rng& rng);

  Var operator()(const Var& x) const;
};

// Base forward plus adapter; the plain entry point used by tests and by Linear.
Var lora_forward(const Linear& base, const LoraAdapter& adapter, const Var& x);

struct LayerNorm {
  Var gamma;
  Var beta;
  static LayerNorm create(ParameterSet& params, const std::string& path, std::size_t dim);
  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
};

// Pre-norm transformer block: x + attn(ln(x)); then + mlp(ln(x)).
struct TransformerBlock {
  std::size_t heads = 1;
  LayerNorm ln1, ln2;
  Linear q, k, v, o;
  Linear fc1, fc2;

  static TransformerBlock create(ParameterSet& params, const std::string& path, std::size_t dim, std::size_t heads,
                                 std::size_t mlp_ratio, Rng& rng);
  void attach_lora(ParameterSet& params, const std::string& path, std::size_t rank, Rng& rng);

  Var operator()(const Var& x, const AttentionMask& mask) const;
};

}  // namespace stpi::nn
