#include "stpi/world/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "stpi/nn/random.hpp"
#include "stpi/world/dynamics.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::world {

namespace {

constexpr double kRegionHeight = 0.1;
constexpr double kMinSeparation = 0.09;
constexpr int kSpawnTries = 2000;

std::vector<ObjectRef> distinct_refs(nn::Rng& rng, std::size_t n) {
  std::vector<int> classes(kClassCount);
  for (int i = 0; i < kClassCount; ++i) classes[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = 0; i + 1 < classes.size(); ++i) std::swap(classes[i], classes[i + rng.index(classes.size() - i)]);
  std::vector<ObjectRef> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = classes[i];
    out.push_back({static_cast<Color>(c / kShapeCount), static_cast<Shape>(c % kShapeCount)});
  }
  return out;
}

std::vector<Region> distinct_regions(nn::Rng& rng, std::size_t n) {
  std::vector<Region> all{Region::TrayLeft, Region::TrayRight, Region::Bowl, Region::ZoneFront};
  for (std::size_t i = 0; i + 1 < all.size(); ++i) std::swap(all[i], all[i + rng.index(all.size() - i)]);
  all.resize(n);
  return all;
}

// A sequence over `pool` with no immediate repeats and at least one revisit.
std::vector<ObjectRef> touch_sequence(nn::Rng& rng, const std::vector<ObjectRef>& pool, std::size_t length) {
  for (;;) {
    std::vector<ObjectRef> seq;
    for (std::size_t i = 0; i < length; ++i) {
      ObjectRef pick;
      do {
        pick = pool[rng.index(pool.size())];
      } while (!seq.empty() && pick == seq.back());
      seq.push_back(pick);
    }
    bool revisit = false;
    for (std::size_t i = 0; i < seq.size() && !revisit; ++i)
      for (std::size_t j = i + 1; j < seq.size(); ++j)
        if (seq[i] == seq[j]) revisit = true;
    if (revisit || length < 3) return seq;
  }
}

std::vector<ObjectRef> unique_objects(const TaskSpec& spec) {
  std::vector<ObjectRef> out;
  for (const auto& r : spec.objects)
    if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
  return out;
}

Vec3 extent_for(Shape s, nn::Rng& rng) {
  const double j = rng.uniform(-0.004, 0.004);
  return s == Shape::Cube ? Vec3{0.04 + j, 0.04 + j, 0.04 + j} : Vec3{0.06 + j, 0.035, 0.03};
}

}  // namespace

Box region_box(Region r) {
  const Vec3 ext{0.16, 0.14, kRegionHeight};
  switch (r) {
    case Region::TrayLeft: return {{0.14, 0.68, kRegionHeight / 2}, ext};
    case Region::TrayRight: return {{0.66, 0.68, kRegionHeight / 2}, ext};
    case Region::Bowl: return {{0.40, 0.70, kRegionHeight / 2}, ext};
    case Region::ZoneFront: return {{0.40, 0.08, kRegionHeight / 2}, ext};
  }
  throw std::invalid_argument("region");
}

std::string region_name(Region r) { return token_name(region_token(r)); }

TaskSpec sample_task(std::uint64_t seed, Suite suite) {
  nn::Rng rng(nn::mix_seed(seed, 0x7a5c));
  TaskSpec spec;
  spec.suite = suite;
  spec.speed = static_cast<Speed>(rng.index(3));
  const std::size_t pick = rng.index(suite == Suite::LongHorizon ? 2 : (suite == Suite::SequentialGoal ? 3 : 2));
  switch (suite) {
    case Suite::ObjectRecognition:
      spec.kind = pick == 0 ? TaskKind::Put : TaskKind::Touch;
      spec.objects = distinct_refs(rng, 1);
      if (spec.kind == TaskKind::Put) spec.regions = distinct_regions(rng, 1);
      break;
    case Suite::SequentialGoal:
      if (pick == 0) {
        spec.kind = TaskKind::PutThenPut;
        spec.objects = distinct_refs(rng, 2);
        spec.regions = distinct_regions(rng, 2);
      } else if (pick == 1) {
        spec.kind = TaskKind::PushTo;
        spec.objects = distinct_refs(rng, 1);
        spec.regions = distinct_regions(rng, 1);
      } else {
        spec.kind = TaskKind::TouchSequence;
        spec.objects = touch_sequence(rng, distinct_refs(rng, 2), 3);
      }
      break;
    case Suite::LongHorizon:
      if (pick == 0) {
        spec.kind = TaskKind::Stack;
        spec.objects = distinct_refs(rng, 3);
      } else {
        spec.kind = TaskKind::TouchSequence;
        spec.objects = touch_sequence(rng, distinct_refs(rng, 3), 4 + rng.index(2));
      }
      break;
  }
  spec.instruction = instruction_tokens(spec.kind, spec.objects, spec.regions, spec.speed);
  return spec;
}

EpisodeState spawn_episode(std::uint64_t seed, const TaskSpec& spec, const WorldConfig& cfg) {
  const auto suite = static_cast<std::size_t>(spec.suite);
  const int lo = cfg.object_min[suite], hi = std::min(cfg.object_max[suite], cfg.max_objects);
  const auto required = unique_objects(spec);
  if (required.empty()) throw std::invalid_argument("task names no objects");
  if (static_cast<int>(required.size()) > hi)
    throw std::invalid_argument("task needs " + std::to_string(required.size()) + " objects; capacity is " +
                                std::to_string(hi));

  nn::Rng rng(nn::mix_seed(seed, 0x5be1));
  const int n = std::max(static_cast<int>(required.size()), lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1))));

  std::vector<ObjectRef> refs = required;
  for (const auto& r : distinct_refs(rng, kClassCount)) {
    if (static_cast<int>(refs.size()) >= n) break;
    if (std::find(refs.begin(), refs.end(), r) == refs.end()) refs.push_back(r);
  }

  EpisodeState s;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= kSpawnTries) throw std::invalid_argument("could not place objects without overlap");
    s.objects.clear();
    bool ok = true;
    for (std::size_t i = 0; i < refs.size() && ok; ++i) {
      ObjectState o;
      o.id = static_cast<int>(i);
      o.ref = refs[i];
      o.extent = extent_for(o.ref.shape, rng);
      o.yaw = rng.uniform(-std::numbers::pi / 4, std::numbers::pi / 4);
      o.position = {rng.uniform(0.08, 0.72), rng.uniform(0.2, 0.52), o.extent.z / 2.0};
      for (const auto& other : s.objects)
        if (horizontal_distance(other.position, o.position) < kMinSeparation) ok = false;
      s.objects.push_back(o);
    }
    if (ok) break;
  }
  s.gripper = {0.4 + rng.uniform(-0.05, 0.05), 0.35 + rng.uniform(-0.05, 0.05), 0.15 + rng.uniform(-0.03, 0.03)};
  s.aperture = 1.0;
  s.gripper_yaw = 0.0;
  (void)cfg;
  return s;
}

std::vector<Milestone> task_milestones(const TaskSpec& spec) {
  std::vector<Milestone> out;
  switch (spec.kind) {
    case TaskKind::Touch:
    case TaskKind::TouchSequence:
      for (const auto& o : spec.objects) out.push_back({Milestone::Kind::Reach, o, {}});
      break;
    case TaskKind::Put:
    case TaskKind::PushTo:
      out.push_back({Milestone::Kind::Placed, spec.objects[0], {spec.regions[0], std::nullopt}});
      break;
    case TaskKind::PutThenPut:
      for (std::size_t i = 0; i < 2; ++i)
        out.push_back({Milestone::Kind::Placed, spec.objects[i], {spec.regions[i], std::nullopt}});
      break;
    case TaskKind::Stack:
      // "stack A on B on C": B goes onto C first, then A onto B.
      for (std::size_t i = spec.objects.size() - 1; i-- > 0;)
        out.push_back({Milestone::Kind::Placed, spec.objects[i], {std::nullopt, spec.objects[i + 1]}});
      break;
  }
  return out;
}

bool milestone_holds(const Milestone& m, const EpisodeState& s, const WorldConfig& cfg, bool require_clear) {
  const ObjectState* o = s.find(m.object);
  if (!o) return false;
  if (m.kind == Milestone::Kind::Reach) {
    const Vec3 site{o->position.x, o->position.y, o->top()};
    return norm(s.gripper - site) <= cfg.reach_tolerance;
  }
  if (!resting(s, *o)) return false;
  if (require_clear && s.gripper.z < o->top() + cfg.clearance) return false;
  if (m.dest.region) return region_box(*m.dest.region).contains(o->position);
  const ObjectState* base = m.dest.onto ? s.find(*m.dest.onto) : nullptr;
  if (!base) return false;
  return in_footprint(*base, o->position) && std::abs(o->bottom() - base->top()) <= 1e-9;
}

TaskProgress::TaskProgress(const TaskSpec& spec, const WorldConfig& cfg) : milestones_(task_milestones(spec)), cfg_(cfg) {}

bool TaskProgress::update(const EpisodeState& s) {
  if (success_) return true;
  if (next_ < milestones_.size() && milestone_holds(milestones_[next_], s, cfg_)) ++next_;
  if (next_ == milestones_.size()) {
    success_ = true;
    for (const auto& m : milestones_)
      if (m.kind == Milestone::Kind::Placed && !milestone_holds(m, s, cfg_, false)) success_ = false;
  }
  return success_;
}

}  // namespace stpi::world
