#pragma once

#include "stpi/world/types.hpp"

namespace stpi::world {

// Throws std::domain_error for non-finite fields, std::invalid_argument for
// finite values outside the ActionStep bounds.
void validate_action(const ActionStep& a, const WorldConfig& cfg);
ActionStep clamp_action(const ActionStep& a, const WorldConfig& cfg);

EpisodeState step_dynamics(const EpisodeState& s, const ActionStep& a, const WorldConfig& cfg = {});

bool in_footprint(const ObjectState& o, const Vec3& p, double margin = 0.0);
// Height of the highest surface below `p` other than object `exclude_id`.
double support_height(const EpisodeState& s, const Vec3& p, int exclude_id);
bool resting(const EpisodeState& s, const ObjectState& o);
bool within_bounds(const EpisodeState& s, const WorldConfig& cfg);

}  // namespace stpi::world
