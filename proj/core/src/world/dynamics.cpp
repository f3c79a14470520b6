#include "stpi/world/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace stpi::world {

namespace {

constexpr double kBoundSlack = 1e-9;
constexpr double kContactMargin = 0.005;

double wrap_angle(double a) {
  while (a > std::numbers::pi) a -= 2.0 * std::numbers::pi;
  while (a < -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

Vec3 clamp_point(const Vec3& p, const WorldConfig& cfg) {
  return {std::clamp(p.x, cfg.workspace_min.x, cfg.workspace_max.x),
          std::clamp(p.y, cfg.workspace_min.y, cfg.workspace_max.y),
          std::clamp(p.z, cfg.workspace_min.z, cfg.workspace_max.z)};
}

void clamp_object(ObjectState& o, const WorldConfig& cfg) {
  o.position = clamp_point(o.position, cfg);
  o.position.z = std::max(o.position.z, o.extent.z / 2.0);
}

bool in_contact(const ObjectState& o, const Vec3& g, const WorldConfig& cfg) {
  return horizontal_distance(o.position, g) <= cfg.push_radius && g.z >= o.bottom() && g.z < o.top() - kContactMargin;
}

}  // namespace

void validate_action(const ActionStep& a, const WorldConfig& cfg) {
  for (double v : a.flat())
    if (!std::isfinite(v)) throw std::domain_error("non-finite action component");
  const double b = cfg.max_step + kBoundSlack;
  if (std::abs(a.dx.x) > b || std::abs(a.dx.y) > b || std::abs(a.dx.z) > b)
    throw std::invalid_argument("action translation exceeds per-step bound");
  if (std::abs(a.dyaw) > cfg.max_yaw_step + kBoundSlack) throw std::invalid_argument("action rotation exceeds bound");
  if (a.g < -kBoundSlack || a.g > 1.0 + kBoundSlack) throw std::invalid_argument("gripper command outside [0,1]");
  if (a.dt < cfg.dt_min - kBoundSlack || a.dt > cfg.dt_max + kBoundSlack)
    throw std::invalid_argument("action dt outside bounds");
}

ActionStep clamp_action(const ActionStep& a, const WorldConfig& cfg) {
  ActionStep out;
  out.dx = {std::clamp(a.dx.x, -cfg.max_step, cfg.max_step), std::clamp(a.dx.y, -cfg.max_step, cfg.max_step),
            std::clamp(a.dx.z, -cfg.max_step, cfg.max_step)};
  out.dyaw = std::clamp(a.dyaw, -cfg.max_yaw_step, cfg.max_yaw_step);
  out.g = std::clamp(a.g, 0.0, 1.0);
  out.dt = std::clamp(a.dt, cfg.dt_min, cfg.dt_max);
  return out;
}

bool in_footprint(const ObjectState& o, const Vec3& p, double margin) {
  const double dx = p.x - o.position.x, dy = p.y - o.position.y;
  const double c = std::cos(o.yaw), s = std::sin(o.yaw);
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= o.extent.x / 2.0 + margin && std::abs(ly) <= o.extent.y / 2.0 + margin;
}

double support_height(const EpisodeState& s, const Vec3& p, int exclude_id) {
  double h = 0.0;
  for (const auto& o : s.objects) {
    if (o.id == exclude_id || (s.held && *s.held == o.id)) continue;
    if (o.top() <= p.z + 1e-9 && in_footprint(o, p)) h = std::max(h, o.top());
  }
  return h;
}

bool resting(const EpisodeState& s, const ObjectState& o) {
  if (s.held && *s.held == o.id) return false;
  return std::abs(o.bottom() - support_height(s, o.position, o.id)) <= 1e-9;
}

bool within_bounds(const EpisodeState& s, const WorldConfig& cfg) {
  const Box ws = cfg.workspace();
  if (!ws.contains(s.gripper)) return false;
  for (const auto& o : s.objects)
    if (!ws.contains(o.position) || o.position.z < 0.0) return false;
  return true;
}

EpisodeState step_dynamics(const EpisodeState& s, const ActionStep& a, const WorldConfig& cfg) {
  validate_action(a, cfg);
  EpisodeState n = s;

  const bool open = s.aperture >= 0.5;
  int pushed = -1;
  if (!s.held && open) {
    double best = cfg.push_radius;
    for (const auto& o : s.objects) {
      const double d = horizontal_distance(o.position, s.gripper);
      if (in_contact(o, s.gripper, cfg) && d <= best) {
        best = d;
        pushed = o.id;
      }
    }
  }

  n.gripper = clamp_point(s.gripper + a.dx, cfg);
  n.gripper_yaw = wrap_angle(s.gripper_yaw + a.dyaw);
  const Vec3 moved = n.gripper - s.gripper;

  for (auto& o : n.objects) {
    if (s.held && *s.held == o.id) {
      o.position = o.position + moved;
      o.yaw = wrap_angle(o.yaw + a.dyaw);
      clamp_object(o, cfg);
    } else if (o.id == pushed) {
      o.position.x += moved.x;
      o.position.y += moved.y;
      clamp_object(o, cfg);
    }
  }

  const double a0 = s.aperture;
  const double a1 = a0 + std::clamp(a.g - a0, -cfg.aperture_rate, cfg.aperture_rate);
  n.aperture = std::clamp(a1, 0.0, 1.0);

  if (!s.held && a0 >= 0.5 && n.aperture < 0.5) {
    double best = cfg.grasp_radius;
    std::optional<int> pick;
    for (const auto& o : n.objects) {
      const double d = horizontal_distance(o.position, n.gripper);
      const bool band = n.gripper.z >= o.position.z - 0.01 && n.gripper.z <= o.top() + 0.025;
      if (band && d <= best) {
        best = d;
        pick = o.id;
      }
    }
    n.held = pick;
  } else if (s.held && a0 < 0.5 && n.aperture >= 0.5) {
    const int id = *s.held;
    n.held.reset();
    for (auto& o : n.objects) {
      if (o.id != id) continue;
      o.position.z = support_height(n, o.position, id) + o.extent.z / 2.0;
    }
  }

  n.time = s.time + a.dt;
  n.steps = s.steps + 1;
  return n;
}

}  // namespace stpi::world
