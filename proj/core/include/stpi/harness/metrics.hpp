#pragma once

#include <filesystem>
#include <vector>

#include "stpi/harness/evaluate.hpp"

namespace stpi::harness {

struct TrajectoryMetrics {
  double path_length = 0.0;        // metres
  double mean_jerk = 0.0;          // mean |third difference| of positions
  double velocity_variance = 0.0;  // variance of |dx| / dt over steps
};

// positions.size() == dts.size() + 1; needs at least 4 positions.
TrajectoryMetrics trajectory_metrics(const std::vector<world::Vec3>& positions, const std::vector<double>& dts);
TrajectoryMetrics trajectory_metrics(const EpisodeResult& e);

// Writes <stem>.csv (t, x, y, z, yaw, g, dt, prompt per step) and <stem>.svg
// (top-down path coloured by prompt index).
void export_trajectory(const EpisodeResult& e, const std::filesystem::path& stem);
std::string trajectory_csv(const EpisodeResult& e);
std::string trajectory_svg(const EpisodeResult& e);

}  // namespace stpi::harness
