#include "stpi/world/types.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stpi::world {

double norm(const Vec3& v) { return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z); }

double horizontal_distance(const Vec3& a, const Vec3& b) { return std::hypot(a.x - b.x, a.y - b.y); }

bool Box::contains(const Vec3& p) const {
  return contains_xy(p) && std::abs(p.z - center.z) <= extent.z / 2.0;
}

bool Box::contains_xy(const Vec3& p) const {
  return std::abs(p.x - center.x) <= extent.x / 2.0 && std::abs(p.y - center.y) <= extent.y / 2.0;
}

bool Box::intersects(const Box& o) const {
  return std::abs(center.x - o.center.x) <= (extent.x + o.extent.x) / 2.0 &&
         std::abs(center.y - o.center.y) <= (extent.y + o.extent.y) / 2.0 &&
         std::abs(center.z - o.center.z) <= (extent.z + o.extent.z) / 2.0;
}

std::array<double, 6> Box::flat() const {
  return {center.x, center.y, center.z, extent.x, extent.y, extent.z};
}

Box Box::from_flat(const double* v) { return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}}; }

std::string suite_name(Suite s) {
  switch (s) {
    case Suite::ObjectRecognition: return "ObjectRecognition";
    case Suite::SequentialGoal: return "SequentialGoal";
    case Suite::LongHorizon: return "LongHorizon";
  }
  return "?";
}

std::optional<Suite> parse_suite(const std::string& s) {
  for (Suite v : {Suite::ObjectRecognition, Suite::SequentialGoal, Suite::LongHorizon})
    if (suite_name(v) == s) return v;
  return std::nullopt;
}

std::string speed_name(Speed s) {
  switch (s) {
    case Speed::Fast: return "fast";
    case Speed::Medium: return "medium";
    case Speed::Slow: return "slow";
  }
  return "?";
}

Box WorldConfig::workspace() const {
  return {(workspace_min + workspace_max) * 0.5, workspace_max - workspace_min};
}

double WorldConfig::dt_for(Speed s) const {
  switch (s) {
    case Speed::Fast: return 0.05;
    case Speed::Medium: return 0.1;
    case Speed::Slow: return 0.2;
  }
  return 0.1;
}

const ObjectState* EpisodeState::find(const ObjectRef& ref) const {
  for (const auto& o : objects)
    if (o.ref == ref) return &o;
  return nullptr;
}

ObjectState* EpisodeState::find(const ObjectRef& ref) {
  for (auto& o : objects)
    if (o.ref == ref) return &o;
  return nullptr;
}

const ObjectState& EpisodeState::object(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return o;
  throw std::out_of_range("object id " + std::to_string(id));
}

}  // namespace stpi::world
