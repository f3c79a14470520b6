#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stpi/harness/config.hpp"
#include "stpi/harness/model.hpp"
#include "stpi/vlm/controller.hpp"
#include "stpi/world/dataset.hpp"

namespace stpi::harness {

enum class PolicyKind { Model, Oracle, Replay, Random };

std::string policy_name(PolicyKind p);
std::optional<PolicyKind> parse_policy(const std::string& s);

struct StepRecord {
  double t = 0.0;  // after the step
  world::Vec3 position;
  double yaw = 0.0;
  double g = 0.0;
  double dt = 0.0;
  std::size_t prompt = 0;
};

struct EpisodeResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  world::Suite suite = world::Suite::ObjectRecognition;
  bool success = false;
  double completion_time = 0.0;  // sum of executed dt
  std::size_t steps = 0;
  std::size_t plan_calls = 0;
  std::size_t milestones = 0;
  std::size_t milestones_total = 0;
  std::string failure;  // empty on success
  world::Vec3 start;
  std::vector<StepRecord> trajectory;
  std::vector<vlm::PlanTraceRow> plans;
};

struct SuiteStats {
  world::Suite suite = world::Suite::ObjectRecognition;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double completion_time = 0.0;  // mean over successes, 0 when none
};

struct EvalReport {
  std::string policy;
  std::vector<SuiteStats> suites;
  SuiteStats overall;
  std::uint64_t seed = 0;
  std::size_t first_index = 0;
  std::vector<EpisodeResult> episodes;  // ordered by index
};

struct EpisodeSpec {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  world::Suite suite = world::Suite::ObjectRecognition;
};

// Episode i of an evaluation: seed mix_seed(eval.seed, i); suites cycle through
// the mix in order.
std::vector<EpisodeSpec> eval_episodes(const EvalConfig& eval);

EpisodeResult run_episode(const Model* model, PolicyKind policy, const EpisodeSpec& ep, const EvalConfig& eval,
                          const world::EpisodeRecord* replay = nullptr, const world::WorldConfig& wc = {});

// Replay runs over `records` (one episode each); other policies over
// eval_episodes(). Episodes fan out to `eval.workers` threads.
EvalReport evaluate(const Model* model, PolicyKind policy, const EvalConfig& eval,
                    const std::vector<world::EpisodeRecord>* records = nullptr, const world::WorldConfig& wc = {});

EvalReport summarize(std::string policy, std::uint64_t seed, std::vector<EpisodeResult> episodes);

// Fixed column order; one row per suite then an "all" row.
std::string report_csv(const EvalReport& r);
std::string episodes_csv(const EvalReport& r);

}  // namespace stpi::harness
