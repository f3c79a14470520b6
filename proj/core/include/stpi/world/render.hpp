#pragma once

#include <utility>
#include <vector>

#include "stpi/world/types.hpp"

namespace stpi::world {

inline constexpr double kGripperIntensity = 1.0;
inline constexpr double kGripperFootprint = 0.03;

double class_intensity(const ObjectRef& ref);

RawObservation render_observation(const EpisodeState& s, const WorldConfig& cfg = {});

// Run-length encoding of a grid: (value, run) pairs in row-major order.
std::vector<std::pair<double, std::size_t>> rle_encode(const std::vector<double>& grid);
std::vector<double> rle_decode(const std::vector<std::pair<double, std::size_t>>& runs);

}  // namespace stpi::world
