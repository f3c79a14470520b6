#pragma once

#include <cstdint>
#include <random>

#include "stpi/nn/tensor.hpp"

namespace stpi::nn {

// Seeded generator used everywhere randomness enters: parameter init, noise
// draws, minibatch sampling. Same seed, same stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::uint64_t next() { return engine_(); }

  Tensor normal_tensor(const Shape& shape, double stddev = 1.0);

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finaliser; derives independent child seeds from (seed, index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace stpi::nn
