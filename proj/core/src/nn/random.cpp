#include "stpi/nn/random.hpp"

namespace stpi::nn {

Tensor Rng::normal_tensor(const Shape& shape, double stddev) {
  Tensor t(shape, 0.0);
  for (double& v : t.values()) v = normal(0.0, stddev);
  return t;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace stpi::nn
