#pragma once

#include <cstddef>
#include <vector>

namespace stpi::nn {

// [sin(2^j pi t), cos(2^j pi t)] for j = 0..frequencies-1, sin before cos.
// Throws std::invalid_argument for non-finite t or frequencies == 0.
std::vector<double> fourier_encode(double t, std::size_t frequencies);

}  // namespace stpi::nn
