#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stpi/world/types.hpp"

namespace stpi::world {

inline constexpr int kDatasetVersion = 1;

struct EpisodeRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  TaskSpec spec;
  EpisodeState initial;
  std::vector<SubTaskAnnotation> subtasks;
  std::vector<ActionStep> actions;
  std::vector<RawObservation> observations;  // actions.size() + 1
};

struct DatasetConfig {
  std::vector<std::pair<Suite, double>> mix{{Suite::ObjectRecognition, 1.0},
                                            {Suite::SequentialGoal, 1.0},
                                            {Suite::LongHorizon, 1.0}};
  std::size_t episodes = 200;
  std::uint64_t seed = 1;
};

// Parses "SequentialGoal", "mixed", or "ObjectRecognition:1,LongHorizon:2".
std::vector<std::pair<Suite, double>> parse_suite_mix(const std::string& text);

// Samples a task and layout from `seed`; empty when the oracle cannot solve it.
std::optional<EpisodeRecord> generate_episode(std::uint64_t seed, Suite suite, const WorldConfig& cfg = {});

// Episode i draws seeds mix_seed(config.seed, i * 1024 + attempt) until the
// oracle succeeds.
std::vector<EpisodeRecord> generate_records(const DatasetConfig& config, const WorldConfig& cfg = {});

std::string record_to_line(const EpisodeRecord& r);
EpisodeRecord record_from_line(const std::string& line);

void write_dataset(const std::filesystem::path& path, const std::vector<EpisodeRecord>& records);
std::vector<EpisodeRecord> load_dataset(const std::filesystem::path& path);
std::size_t generate_dataset(const DatasetConfig& config, const std::filesystem::path& path,
                             const WorldConfig& cfg = {});

// Segment partition, duration sums, box/workspace intersection and grammar
// closure. Returns human-readable violations; empty means valid.
std::vector<std::string> validate_record(const EpisodeRecord& r, const WorldConfig& cfg = {});

// Replays the stored actions from the stored initial state and checks every
// sub-goal at its segment end, then the task goal at the final step.
bool replay_check(const EpisodeRecord& r, const WorldConfig& cfg = {});

}  // namespace stpi::world
