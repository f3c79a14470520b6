#include "stpi/nn/fourier.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace stpi::nn {

std::vector<double> fourier_encode(double t, std::size_t frequencies) {
  if (frequencies == 0) throw std::invalid_argument("fourier_encode: need at least one frequency");
  if (!std::isfinite(t)) throw std::invalid_argument("fourier_encode: non-finite timestamp");
  std::vector<double> out;
  out.reserve(2 * frequencies);
  double w = std::numbers::pi;
  for (std::size_t j = 0; j < frequencies; ++j) {
    out.push_back(std::sin(w * t));
    out.push_back(std::cos(w * t));
    w *= 2.0;
  }
  return out;
}

}  // namespace stpi::nn
