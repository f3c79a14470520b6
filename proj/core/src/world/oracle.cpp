#include "stpi/world/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>

#include "stpi/world/dynamics.hpp"
#include "stpi/world/tasks.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::world {

namespace {

constexpr double kPlacementSize = 0.04;
constexpr double kSiteHeight = 0.02;
constexpr int kGraspSteps = 3;

struct Leg {
  Vec3 target;
  double g = 1.0;
  std::optional<double> yaw;
  int min_steps = 1;
};

using LegFn = std::function<Leg(const EpisodeState&)>;

double wrap_angle(double a) {
  while (a > std::numbers::pi) a -= 2.0 * std::numbers::pi;
  while (a < -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

const ObjectState& require(const EpisodeState& s, const ObjectRef& r) {
  const ObjectState* o = s.find(r);
  if (!o) throw std::runtime_error("sub-task names an object missing from the layout");
  return *o;
}

std::vector<SubTask> pick_place(const ObjectRef& x, const Destination& d) {
  return {{Verb::Reach, x, {}}, {Verb::Grasp, x, {}}, {Verb::Transport, x, d}, {Verb::Release, x, d}};
}

}  // namespace

std::vector<SubTask> expand_task(const TaskSpec& spec) {
  std::vector<SubTask> out;
  auto append = [&](const std::vector<SubTask>& v) { out.insert(out.end(), v.begin(), v.end()); };
  switch (spec.kind) {
    case TaskKind::Touch:
    case TaskKind::TouchSequence:
      for (const auto& o : spec.objects) out.push_back({Verb::Reach, o, {}});
      break;
    case TaskKind::Put:
      append(pick_place(spec.objects.at(0), {spec.regions.at(0), std::nullopt}));
      break;
    case TaskKind::PutThenPut:
      for (std::size_t i = 0; i < 2; ++i) append(pick_place(spec.objects.at(i), {spec.regions.at(i), std::nullopt}));
      break;
    case TaskKind::PushTo:
      out.push_back({Verb::Reach, spec.objects.at(0), {}});
      out.push_back({Verb::Push, spec.objects.at(0), {spec.regions.at(0), std::nullopt}});
      break;
    case TaskKind::Stack:
      if (spec.objects.size() < 2) throw std::invalid_argument("stack needs at least two objects");
      for (std::size_t i = spec.objects.size() - 1; i-- > 0;)
        append(pick_place(spec.objects[i], {std::nullopt, spec.objects[i + 1]}));
      break;
  }
  return out;
}

Box target_box(const EpisodeState& s, const SubTask& t, const WorldConfig& cfg) {
  const ObjectState& x = require(s, t.object);
  switch (t.verb) {
    case Verb::Reach:
    case Verb::Grasp: {
      const double c = std::abs(std::cos(x.yaw)), sn = std::abs(std::sin(x.yaw));
      return {{x.position.x, x.position.y, x.top()},
              {c * x.extent.x + sn * x.extent.y, sn * x.extent.x + c * x.extent.y, kSiteHeight}};
    }
    case Verb::Transport:
    case Verb::Release: {
      const Vec3 size{kPlacementSize, kPlacementSize, kPlacementSize};
      if (t.dest.region) {
        const Box r = region_box(*t.dest.region);
        return {{r.center.x, r.center.y, x.extent.z / 2.0 + cfg.place_drop}, size};
      }
      if (!t.dest.onto) throw std::invalid_argument("placement without destination");
      const ObjectState& base = require(s, *t.dest.onto);
      return {{base.position.x, base.position.y, base.top() + x.extent.z / 2.0 + cfg.place_drop}, size};
    }
    case Verb::Push:
      if (!t.dest.region) throw std::invalid_argument("push without region");
      return region_box(*t.dest.region);
  }
  throw std::invalid_argument("verb");
}

std::vector<SubTaskAnnotation> oracle_decompose(const TaskSpec& spec, const EpisodeState& layout,
                                                const WorldConfig& cfg) {
  EpisodeState sim = layout;
  std::vector<SubTaskAnnotation> out;
  for (const auto& t : expand_task(spec)) {
    SubTaskAnnotation a;
    a.task = t;
    a.description = describe(t);
    a.box = target_box(sim, t, cfg);
    if (t.verb == Verb::Release || t.verb == Verb::Push) {
      ObjectState* x = sim.find(t.object);
      x->position.x = a.box.center.x;
      x->position.y = a.box.center.y;
      x->position.z = support_height(sim, {x->position.x, x->position.y, 1.0}, x->id) + x->extent.z / 2.0;
    }
    out.push_back(std::move(a));
  }
  return out;
}

bool check_subgoal(const EpisodeState& s, const SubTaskAnnotation& a, const WorldConfig& cfg) {
  const ObjectState* x = s.find(a.task.object);
  if (!x) return false;
  const bool holding_x = s.held && *s.held == x->id;
  switch (a.task.verb) {
    case Verb::Reach: return norm(s.gripper - a.box.center) <= cfg.reach_tolerance;
    case Verb::Grasp: return holding_x;
    case Verb::Transport: return holding_x && a.box.contains(x->position);
    case Verb::Release: return resting(s, *x) && s.gripper.z >= x->top() + cfg.clearance;
    case Verb::Push:
      return !holding_x && a.box.contains_xy(x->position) && s.gripper.z >= x->top() + cfg.clearance;
  }
  return false;
}

std::vector<ActionStep> oracle_demonstrate(const EpisodeState& start, const SubTaskAnnotation& a, Speed speed,
                                           const WorldConfig& cfg) {
  const ObjectRef ref = a.task.object;
  const Box box = a.box;
  std::vector<LegFn> legs;
  switch (a.task.verb) {
    case Verb::Reach:
      legs.push_back([&, ref](const EpisodeState& s) {
        return Leg{box.center, 1.0, require(s, ref).yaw, 1};
      });
      break;
    case Verb::Grasp:
      legs.push_back([](const EpisodeState& s) { return Leg{s.gripper, 0.0, std::nullopt, kGraspSteps}; });
      break;
    case Verb::Transport:
      legs.push_back([&, ref](const EpisodeState& s) {
        const Vec3 offset = require(s, ref).position - s.gripper;
        return Leg{box.center - offset, 0.0, std::nullopt, 1};
      });
      break;
    case Verb::Release:
      legs.push_back([](const EpisodeState& s) { return Leg{s.gripper, 1.0, std::nullopt, 1}; });
      legs.push_back([&](const EpisodeState& s) {
        return Leg{s.gripper + Vec3{0, 0, cfg.retreat}, 1.0, std::nullopt, 1};
      });
      break;
    case Verb::Push:
      legs.push_back([ref](const EpisodeState& s) {
        return Leg{{s.gripper.x, s.gripper.y, require(s, ref).position.z}, 1.0, std::nullopt, 1};
      });
      legs.push_back([&, ref](const EpisodeState& s) {
        const Vec3 offset = s.gripper - require(s, ref).position;
        return Leg{{box.center.x + offset.x, box.center.y + offset.y, s.gripper.z}, 1.0, std::nullopt, 1};
      });
      legs.push_back([&](const EpisodeState& s) {
        return Leg{s.gripper + Vec3{0, 0, cfg.retreat}, 1.0, std::nullopt, 1};
      });
      break;
  }

  const double dt = cfg.dt_for(speed);
  std::vector<ActionStep> out;
  EpisodeState s = start;
  for (const auto& make : legs) {
    const Leg leg = make(s);
    const Vec3 delta = leg.target - s.gripper;
    const int n = std::max(leg.min_steps, static_cast<int>(std::ceil(norm(delta) / cfg.max_step - 1e-12)));
    for (int i = 0; i < n; ++i) {
      const double remaining = n - i;
      ActionStep step;
      step.dx = (leg.target - s.gripper) * (1.0 / remaining);
      if (leg.yaw) {
        step.dyaw = std::clamp(wrap_angle(*leg.yaw - s.gripper_yaw) / remaining, -cfg.max_yaw_step, cfg.max_yaw_step);
      }
      step.g = leg.g;
      step.dt = dt;
      step = clamp_action(step, cfg);
      s = step_dynamics(s, step, cfg);
      out.push_back(step);
      if (check_subgoal(s, a, cfg)) return out;
    }
  }
  throw std::runtime_error("target unreachable: " + detokenize(a.description));
}

Demonstration demonstrate_task(const TaskSpec& spec, const EpisodeState& initial, const WorldConfig& cfg) {
  Demonstration demo;
  demo.subtasks = oracle_decompose(spec, initial, cfg);
  demo.states.push_back(initial);
  for (auto& a : demo.subtasks) {
    const EpisodeState& s = demo.states.back();
    a.box = target_box(s, a.task, cfg);
    a.segment_begin = demo.actions.size();
    const auto steps = oracle_demonstrate(s, a, spec.speed, cfg);
    double duration = 0.0;
    for (const auto& step : steps) {
      demo.states.push_back(step_dynamics(demo.states.back(), step, cfg));
      demo.actions.push_back(step);
      duration += step.dt;
    }
    a.segment_end = demo.actions.size();
    a.duration = duration;
  }
  return demo;
}

}  // namespace stpi::world
