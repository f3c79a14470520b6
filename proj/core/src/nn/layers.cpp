#include "stpi/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stpi::nn {

Linear Linear::create(ParameterSet& params, const std::string& path, std::size_t in, std::size_t out, Rng& rng,
                      double gain) {
  Linear l;
  l.in_dim = in;
  l.out_dim = out;
  l.weight = params.add(path + ".weight", rng.normal_tensor({in, out}, gain / std::sqrt(static_cast<double>(in))));
  l.bias = params.add(path + ".bias", Tensor({out}, 0.0));
  return l;
}

void Linear::attach_lora(ParameterSet& params, const std::string& path, std::size_t rank, Rng& rng) {
  if (rank == 0 || rank >= std::min(in_dim, out_dim)) {
    throw std::invalid_argument("LoRA rank " + std::to_string(rank) + " invalid for " + std::to_string(in_dim) + "x" +
                                std::to_string(out_dim) + " linear");
  }
  LoraAdapter a;
  a.rank = rank;
  a.down = params.add(path + ".lora.down", rng.normal_tensor({in_dim, rank}, 1.0 / std::sqrt(double(in_dim))));
  a.up = params.add(path + ".lora.up", Tensor({rank, out_dim}, 0.0));
  lora = a;
}

Var lora_forward(const Linear& base, const LoraAdapter& adapter, const Var& x) {
  if (adapter.rank == 0 || adapter.rank >= std::min(base.in_dim, base.out_dim)) {
    throw std::invalid_argument("lora_forward: rank " + std::to_string(adapter.rank) + " invalid for base " +
                                std::to_string(base.in_dim) + "x" + std::to_string(base.out_dim));
  }
  return add(linear(x, base.weight, base.bias), matmul(matmul(x, adapter.down), adapter.up));
}

Var Linear::operator()(const Var& x) const {
  if (lora) return lora_forward(*this, *lora, x);
  return linear(x, weight, bias);
}

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& path, std::size_t dim) {
  LayerNorm ln;
  ln.gamma = params.add(path + ".gamma", Tensor({dim}, 1.0));
  ln.beta = params.add(path + ".beta", Tensor({dim}, 0.0));
  return ln;
}

TransformerBlock TransformerBlock::create(ParameterSet& params, const std::string& path, std::size_t dim,
                                          std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
  if (heads == 0 || dim % heads != 0) throw std::invalid_argument("TransformerBlock: heads must divide dim");
  TransformerBlock b;
  b.heads = heads;
  b.ln1 = LayerNorm::create(params, path + ".ln1", dim);
  b.q = Linear::create(params, path + ".attn.q", dim, dim, rng);
  b.k = Linear::create(params, path + ".attn.k", dim, dim, rng);
  b.v = Linear::create(params, path + ".attn.v", dim, dim, rng);
  b.o = Linear::create(params, path + ".attn.o", dim, dim, rng, 0.5);
  b.ln2 = LayerNorm::create(params, path + ".ln2", dim);
  b.fc1 = Linear::create(params, path + ".mlp.fc1", dim, dim * mlp_ratio, rng);
  b.fc2 = Linear::create(params, path + ".mlp.fc2", dim * mlp_ratio, dim, rng, 0.5);
  return b;
}

void TransformerBlock::attach_lora(ParameterSet& params, const std::string& path, std::size_t rank, Rng& rng) {
  q.attach_lora(params, path + ".attn.q", rank, rng);
  k.attach_lora(params, path + ".attn.k", rank, rng);
  v.attach_lora(params, path + ".attn.v", rank, rng);
  o.attach_lora(params, path + ".attn.o", rank, rng);
  fc1.attach_lora(params, path + ".mlp.fc1", rank, rng);
  fc2.attach_lora(params, path + ".mlp.fc2", rank, rng);
}

Var TransformerBlock::operator()(const Var& x, const AttentionMask& mask) const {
  const Var h = ln1(x);
  const Var attn = masked_attention(q(h), k(h), v(h), mask, heads);
  const Var x1 = add(x, o(attn));
  const Var h2 = ln2(x1);
  return add(x1, fc2(gelu(fc1(h2))));
}

}  // namespace stpi::nn
