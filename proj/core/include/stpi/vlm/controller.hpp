#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stpi/vlm/planner.hpp"

namespace stpi::vlm {

struct ControllerConfig {
  double beta = 2.0;           // forced replan once executed time >= beta * duration
  std::size_t replan_cap = 12;
};

struct CompletionSignal {
  bool subgoal = false;   // sub-goal predicate held
  double elapsed = 0.0;   // seconds spent on the active prompt
};

class ReplanLimitExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rolling horizon: holds the current K-prompt plan, executes its first prompt,
// and replans with the grown history when that prompt completes.
class RollingController {
 public:
  // `plan` receives the executed-prompt history and must read the current
  // observation window itself.
  using PlanFn = std::function<std::vector<ActionPrompt>(const std::vector<std::vector<int>>& history)>;

  RollingController(PlanFn plan, ControllerConfig cfg);

  const ActionPrompt& start();
  const ActionPrompt& active() const;
  bool completed(const CompletionSignal& signal) const;
  // Unchanged prompt when the signal is not a completion; otherwise records
  // the active description, replans and returns the new first prompt.
  // Throws ReplanLimitExceeded past the cap.
  const ActionPrompt& update(const CompletionSignal& signal);

  std::size_t prompt_index() const { return history_.size(); }
  std::size_t replans() const { return replans_; }
  std::size_t plan_calls() const { return plan_calls_; }
  const std::vector<std::vector<int>>& history() const { return history_; }
  const std::vector<ActionPrompt>& current_plan() const { return plan_; }

 private:
  void replan();

  PlanFn plan_fn_;
  ControllerConfig cfg_;
  std::vector<ActionPrompt> plan_;
  std::vector<std::vector<int>> history_;
  std::size_t replans_ = 0;
  std::size_t plan_calls_ = 0;
};

struct PlanTraceRow {
  std::size_t episode = 0;
  std::size_t k = 0;
  ActionPrompt predicted;
  std::optional<world::SubTaskAnnotation> truth;
};

std::string plan_trace_line(const PlanTraceRow& row);
void write_plan_trace(const std::filesystem::path& path, const std::vector<PlanTraceRow>& rows);

}  // namespace stpi::vlm
