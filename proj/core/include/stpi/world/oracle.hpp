#pragma once

#include <vector>

#include "stpi/world/types.hpp"

namespace stpi::world {

// Grammar expansion of a task into verb-level sub-tasks.
std::vector<SubTask> expand_task(const TaskSpec& spec);

// Target box for a sub-task given the current state: the object's grasp site
// for reach/grasp, the placement box for transport/release, the region for push.
Box target_box(const EpisodeState& s, const SubTask& t, const WorldConfig& cfg = {});

// Skeleton annotations with descriptions and boxes predicted from `layout`;
// durations and segments stay zero until demonstration.
std::vector<SubTaskAnnotation> oracle_decompose(const TaskSpec& spec, const EpisodeState& layout,
                                                const WorldConfig& cfg = {});

bool check_subgoal(const EpisodeState& s, const SubTaskAnnotation& a, const WorldConfig& cfg = {});

// Straight-line legs executed through the dynamics until the sub-goal holds.
// Throws std::runtime_error when the legs end without reaching it.
std::vector<ActionStep> oracle_demonstrate(const EpisodeState& s, const SubTaskAnnotation& a, Speed speed,
                                           const WorldConfig& cfg = {});

struct Demonstration {
  std::vector<SubTaskAnnotation> subtasks;
  std::vector<ActionStep> actions;
  std::vector<EpisodeState> states;  // actions.size() + 1
};

// Decompose, then demonstrate each sub-task from the state the previous one
// left behind, re-resolving its target box there.
Demonstration demonstrate_task(const TaskSpec& spec, const EpisodeState& initial, const WorldConfig& cfg = {});

}  // namespace stpi::world
