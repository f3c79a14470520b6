#include "stpi/world/render.hpp"

#include <algorithm>
#include <cmath>

#include "stpi/world/dynamics.hpp"

namespace stpi::world {

double class_intensity(const ObjectRef& ref) { return (ref.class_index() + 1.0) / (kClassCount + 1.0); }

RawObservation render_observation(const EpisodeState& s, const WorldConfig& cfg) {
  const auto g = static_cast<std::size_t>(cfg.grid_size);
  RawObservation obs;
  obs.grid.assign(g * g, 0.0);
  const double cw = (cfg.workspace_max.x - cfg.workspace_min.x) / static_cast<double>(g);
  const double ch = (cfg.workspace_max.y - cfg.workspace_min.y) / static_cast<double>(g);
  auto cell_center = [&](std::size_t r, std::size_t c) {
    return Vec3{cfg.workspace_min.x + (static_cast<double>(c) + 0.5) * cw,
                cfg.workspace_min.y + (static_cast<double>(r) + 0.5) * ch, 0.0};
  };

  std::vector<const ObjectState*> order;
  for (const auto& o : s.objects) order.push_back(&o);
  std::stable_sort(order.begin(), order.end(),
                   [](const ObjectState* a, const ObjectState* b) { return a->position.z < b->position.z; });
  for (const ObjectState* o : order) {
    const double v = class_intensity(o->ref);
    for (std::size_t r = 0; r < g; ++r)
      for (std::size_t c = 0; c < g; ++c)
        if (in_footprint(*o, cell_center(r, c))) obs.grid[r * g + c] = v;
  }
  const double half = kGripperFootprint / 2.0;
  for (std::size_t r = 0; r < g; ++r)
    for (std::size_t c = 0; c < g; ++c) {
      const Vec3 p = cell_center(r, c);
      if (std::abs(p.x - s.gripper.x) <= half && std::abs(p.y - s.gripper.y) <= half)
        obs.grid[r * g + c] = kGripperIntensity;
    }

  obs.geometry.assign(static_cast<std::size_t>(cfg.max_objects) * kGeometryDims, 0.0);
  for (std::size_t i = 0; i < s.objects.size() && i < static_cast<std::size_t>(cfg.max_objects); ++i) {
    const ObjectState& o = s.objects[i];
    double* dst = obs.geometry.data() + i * kGeometryDims;
    dst[0] = o.position.x;
    dst[1] = o.position.y;
    dst[2] = o.position.z;
    dst[3] = o.extent.x;
    dst[4] = o.extent.y;
    dst[5] = o.extent.z;
    dst[6] = o.yaw;
    dst[7 + static_cast<std::size_t>(o.ref.color)] = 1.0;
    dst[7 + kColorCount + static_cast<std::size_t>(o.ref.shape)] = 1.0;
  }
  obs.proprio = {s.gripper.x, s.gripper.y, s.gripper.z, s.gripper_yaw, s.aperture, s.held ? 1.0 : 0.0};
  obs.t = s.time;
  return obs;
}

std::vector<std::pair<double, std::size_t>> rle_encode(const std::vector<double>& grid) {
  std::vector<std::pair<double, std::size_t>> runs;
  for (double v : grid) {
    if (!runs.empty() && runs.back().first == v) {
      ++runs.back().second;
    } else {
      runs.emplace_back(v, 1);
    }
  }
  return runs;
}

std::vector<double> rle_decode(const std::vector<std::pair<double, std::size_t>>& runs) {
  std::vector<double> out;
  for (const auto& [v, n] : runs) out.insert(out.end(), n, v);
  return out;
}

}  // namespace stpi::world
