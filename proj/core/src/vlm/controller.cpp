#include "stpi/vlm/controller.hpp"

#include <fstream>

#include "json.hpp"
#include "stpi/world/vocab.hpp"

namespace stpi::vlm {

RollingController::RollingController(PlanFn plan, ControllerConfig cfg) : plan_fn_(std::move(plan)), cfg_(cfg) {
  if (!plan_fn_) throw std::invalid_argument("controller: empty plan function");
  if (!(cfg_.beta > 0.0)) throw std::invalid_argument("controller: beta must be positive");
}

void RollingController::replan() {
  plan_ = plan_fn_(history_);
  ++plan_calls_;
  if (plan_.empty()) throw std::runtime_error("controller: planner returned no prompts");
}

const ActionPrompt& RollingController::start() {
  history_.clear();
  replans_ = 0;
  plan_calls_ = 0;
  replan();
  return plan_.front();
}

const ActionPrompt& RollingController::active() const {
  if (plan_.empty()) throw std::logic_error("controller: start() not called");
  return plan_.front();
}

bool RollingController::completed(const CompletionSignal& s) const {
  return s.subgoal || s.elapsed >= cfg_.beta * active().duration;
}

const ActionPrompt& RollingController::update(const CompletionSignal& s) {
  if (!completed(s)) return active();
  if (replans_ >= cfg_.replan_cap)
    throw ReplanLimitExceeded("replanning cap of " + std::to_string(cfg_.replan_cap) + " reached");
  history_.push_back(active().description);
  ++replans_;
  replan();
  return active();
}

std::string plan_trace_line(const PlanTraceRow& row) {
  using nlohmann::json;
  const auto box = row.predicted.box.flat();
  json j = {{"episode", row.episode},
            {"k", row.k},
            {"description", world::detokenize(row.predicted.description)},
            {"truncated", row.predicted.truncated},
            {"box", std::vector<double>(box.begin(), box.end())},
            {"duration", row.predicted.duration}};
  if (row.truth) {
    const auto tb = row.truth->box.flat();
    j["truth"] = {{"description", world::detokenize(row.truth->description)},
                  {"box", std::vector<double>(tb.begin(), tb.end())},
                  {"duration", row.truth->duration}};
  } else {
    j["truth"] = nullptr;
  }
  return j.dump();
}

void write_plan_trace(const std::filesystem::path& path, const std::vector<PlanTraceRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : rows) out << plan_trace_line(r) << '\n';
}

}  // namespace stpi::vlm
