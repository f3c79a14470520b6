#include <benchmark/benchmark.h>

#include "stpi/ae/expert.hpp"
#include "stpi/nn/ops.hpp"
#include "stpi/vlm/loss.hpp"
#include "stpi/vlm/planner.hpp"
#include "stpi/world/dynamics.hpp"
#include "stpi/world/render.hpp"
#include "stpi/world/tasks.hpp"
#include "stpi/world/vocab.hpp"

using namespace stpi;

namespace {

std::vector<world::RawObservation> window(std::size_t frames) {
  const auto spec = world::sample_task(5, world::Suite::SequentialGoal);
  auto s = world::spawn_episode(5, spec);
  std::vector<world::RawObservation> w;
  for (std::size_t f = 0; f < frames; ++f) {
    s.time = 0.8 * static_cast<double>(f);
    w.push_back(world::render_observation(s));
  }
  return w;
}

vlm::PlannerConfig planner_config(benchmark::State& st) {
  vlm::PlannerConfig c;
  c.d_model = static_cast<std::size_t>(st.range(0));
  c.layers = static_cast<std::size_t>(st.range(1));
  return c;
}

void BM_PlannerForward(benchmark::State& st) {
  nn::ParameterSet ps;
  nn::Rng rng(1);
  const auto cfg = planner_config(st);
  vlm::Planner planner(ps, cfg, rng);
  const auto w = window(cfg.frames());
  const auto spec = world::sample_task(5, world::Suite::SequentialGoal);
  for (auto _ : st) {
    nn::NoGradGuard g;
    benchmark::DoNotOptimize(planner.forward(planner.encode_4d(w), spec.instruction, {}, cfg.horizon));
  }
}
BENCHMARK(BM_PlannerForward)->Args({32, 2})->Args({64, 2})->Args({128, 4})->Unit(benchmark::kMillisecond);

void BM_PlannerTrainStep(benchmark::State& st) {
  nn::ParameterSet ps;
  nn::Rng rng(1);
  const auto cfg = planner_config(st);
  vlm::Planner planner(ps, cfg, rng);
  const auto w = window(cfg.frames());
  const auto spec = world::sample_task(5, world::Suite::SequentialGoal);
  const std::vector<vlm::PromptTarget> targets(cfg.horizon, {world::done_description(), std::nullopt, std::nullopt});
  for (auto _ : st) {
    const auto out = planner.forward(planner.encode_4d(w), spec.instruction, {}, cfg.horizon);
    const auto loss = vlm::vlm_loss(out.prompts, targets, {});
    nn::backward(loss.total);
    ps.zero_grad();
  }
}
BENCHMARK(BM_PlannerTrainStep)->Args({32, 2})->Args({64, 2})->Args({128, 4})->Unit(benchmark::kMillisecond);

ae::Condition condition(const ae::ExpertConfig& cfg, nn::Rng& rng) {
  ae::Condition c;
  c.frame = nn::Var(rng.normal_tensor({vlm::kTokensPerFrame, cfg.planner_d}));
  c.semantic = nn::Var(rng.normal_tensor({cfg.semantic_tokens, cfg.planner_d}));
  c.spatial = nn::Var(rng.normal_tensor({1, cfg.planner_d}));
  c.temporal = nn::Var(rng.normal_tensor({1, cfg.planner_d}));
  c.duration = 1.0;
  c.proprio = std::vector<double>(world::kProprioDims, 0.1);
  return c;
}

ae::ExpertConfig expert_config(benchmark::State& st) {
  ae::ExpertConfig c;
  c.d_model = static_cast<std::size_t>(st.range(0));
  c.layers = static_cast<std::size_t>(st.range(1));
  c.planner_d = c.d_model;
  return c;
}

void BM_ExpertTrainStep(benchmark::State& st) {
  nn::ParameterSet ps;
  nn::Rng rng(2);
  const auto cfg = expert_config(st);
  ae::ActionExpert ex(ps, cfg, rng);
  const auto c = condition(cfg, rng);
  const auto a = rng.normal_tensor({cfg.horizon, 6}), w = rng.normal_tensor({cfg.horizon, 6});
  for (auto _ : st) {
    nn::backward(ex.training_loss(c, a, 0.5, w));
    ps.zero_grad();
  }
}
BENCHMARK(BM_ExpertTrainStep)->Args({32, 2})->Args({64, 2})->Unit(benchmark::kMillisecond);

void BM_SampleChunk(benchmark::State& st) {
  nn::ParameterSet ps;
  nn::Rng rng(3);
  const auto cfg = expert_config(st);
  ae::ActionExpert ex(ps, cfg, rng);
  const auto c = condition(cfg, rng);
  std::uint64_t seed = 0;
  for (auto _ : st) benchmark::DoNotOptimize(ex.sample_chunk(c, ++seed));
}
BENCHMARK(BM_SampleChunk)->Args({32, 2})->Args({64, 2})->Unit(benchmark::kMillisecond);

void BM_StepDynamics(benchmark::State& st) {
  const auto spec = world::sample_task(5, world::Suite::LongHorizon);
  auto s = world::spawn_episode(5, spec);
  const world::ActionStep a{{0.01, 0.0, -0.005}, 0.0, 1.0, 0.1};
  for (auto _ : st) benchmark::DoNotOptimize(world::step_dynamics(s, a));
}
BENCHMARK(BM_StepDynamics);

void BM_Render(benchmark::State& st) {
  const auto spec = world::sample_task(5, world::Suite::LongHorizon);
  const auto s = world::spawn_episode(5, spec);
  for (auto _ : st) benchmark::DoNotOptimize(world::render_observation(s));
}
BENCHMARK(BM_Render);

}  // namespace
BENCHMARK_MAIN();
