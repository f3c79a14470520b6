#pragma once

#include <cstdint>
#include <vector>

#include "stpi/world/types.hpp"

namespace stpi::world {

Box region_box(Region r);
std::string region_name(Region r);

TaskSpec sample_task(std::uint64_t seed, Suite suite);

// Deterministic layout for (seed, spec). Throws std::invalid_argument when the
// spec needs more objects than the suite or workspace allows.
EpisodeState spawn_episode(std::uint64_t seed, const TaskSpec& spec, const WorldConfig& cfg = {});

// Ordered task goal. Each milestone must be reached in order; placements must
// still hold when the last one is reached.
struct Milestone {
  enum class Kind { Reach, Placed } kind = Kind::Reach;
  ObjectRef object;
  Destination dest;
};

std::vector<Milestone> task_milestones(const TaskSpec& spec);
// `require_clear` adds the gripper-retreated condition used when a placement
// is first credited.
bool milestone_holds(const Milestone& m, const EpisodeState& s, const WorldConfig& cfg, bool require_clear = true);

class TaskProgress {
 public:
  TaskProgress(const TaskSpec& spec, const WorldConfig& cfg);

  // Returns true once the whole task is satisfied.
  bool update(const EpisodeState& s);
  bool success() const { return success_; }
  std::size_t achieved() const { return next_; }
  std::size_t total() const { return milestones_.size(); }

 private:
  std::vector<Milestone> milestones_;
  WorldConfig cfg_;
  std::size_t next_ = 0;
  bool success_ = false;
};

}  // namespace stpi::world
