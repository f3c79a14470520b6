#include <cmath>

#include "doctest.h"
#include "stpi/nn/ops.hpp"
#include "stpi/vlm/controller.hpp"
#include "stpi/vlm/loss.hpp"
#include "stpi/vlm/planner.hpp"
#include "stpi/world/render.hpp"
#include "stpi/world/tasks.hpp"
#include "stpi/world/vocab.hpp"

using namespace stpi;
using namespace stpi::vlm;
using nn::Tensor;
using nn::Var;
using nn::bitwise_equal;

namespace {

PlannerConfig small_config() {
  PlannerConfig c;
  c.d_model = 16;
  c.layers = 2;
  c.heads = 2;
  c.semantic_tokens = 2;
  c.horizon = 3;
  c.fourier = 4;
  c.lora_rank = 2;
  return c;
}

std::vector<world::RawObservation> sample_window(std::size_t frames, std::uint64_t seed = 7) {
  const auto spec = world::sample_task(seed, world::Suite::SequentialGoal);
  auto s = world::spawn_episode(seed, spec);
  std::vector<world::RawObservation> w;
  for (std::size_t f = 0; f < frames; ++f) {
    s.gripper.x += 0.02 * static_cast<double>(f);
    s.time = 0.1 + 0.8 * static_cast<double>(f);
    w.push_back(world::render_observation(s));
  }
  return w;
}

}  // namespace

TEST_CASE("block-causal mask structure") {
  SUBCASE("K=1 sees context and itself") {
    const auto m = build_block_causal_mask(3, 1, 2);
    for (std::size_t r = 3; r < 7; ++r)
      for (std::size_t c = 0; c < 3; ++c) CHECK(m.allowed(r, c));
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 3; c < 7; ++c) CHECK_FALSE(m.allowed(r, c));
    // semantic rows see semantic tokens; spatial/temporal additionally see themselves
    CHECK(m.allowed(3, 4));
    CHECK_FALSE(m.allowed(3, 5));
    CHECK(m.allowed(5, 3));
    CHECK(m.allowed(5, 5));
    CHECK_FALSE(m.allowed(5, 6));
    CHECK(m.allowed(6, 6));
  }
  SUBCASE("K=2 one-way visibility") {
    const std::size_t ctx = 2, M = 2, B = M + 2;
    const auto m = build_block_causal_mask(ctx, 2, M);
    for (std::size_t r = ctx + B; r < ctx + B + M; ++r)
      for (std::size_t c = ctx; c < ctx + B; ++c) CHECK(m.allowed(r, c));
    for (std::size_t r = ctx; r < ctx + B; ++r)
      for (std::size_t c = ctx + B; c < ctx + 2 * B; ++c) CHECK_FALSE(m.allowed(r, c));
  }
  SUBCASE("prompt reachability is lower triangular") {
    const std::size_t ctx = 4, K = 4, M = 3, B = M + 2;
    const auto m = build_block_causal_mask(ctx, K, M);
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) {
        bool any = false;
        for (std::size_t r = 0; r < B; ++r)
          for (std::size_t c = 0; c < B; ++c) any = any || m.allowed(ctx + i * B + r, ctx + j * B + c);
        CHECK(any == (j <= i));
      }
  }
  SUBCASE("ablation modes") {
    const auto none = build_block_causal_mask(2, 2, 1, MaskMode::None);
    const auto bi = build_block_causal_mask(2, 2, 1, MaskMode::Bidirectional);
    CHECK_FALSE(none.allowed(5, 2));
    CHECK(bi.allowed(2, 5));
    CHECK(bi.allowed(5, 2));
    none.validate();
    bi.validate();
  }
}

TEST_CASE("encode_4d") {
  nn::ParameterSet ps;
  nn::Rng rng(3);
  const auto cfg = small_config();
  Planner planner(ps, cfg, rng);
  const auto window = sample_window(cfg.window);

  SUBCASE("token count") {
    const auto obs = planner.encode_4d(window);
    CHECK(obs.tokens.rows() == cfg.window * kTokensPerFrame);
    CHECK(obs.tokens.cols() == cfg.d_model);
    CHECK(obs.frames == cfg.window);
  }
  SUBCASE("zero fusion gives zero tokens") {
    ps.at("planner.fusion.wf.weight").mutable_value().fill(0.0);
    ps.at("planner.fusion.wf.bias").mutable_value().fill(0.0);
    const auto obs = planner.encode_4d(window);
    for (std::size_t i = 0; i < obs.tokens.value().size(); ++i) CHECK(obs.tokens.value().data()[i] == 0.0);
  }
  SUBCASE("timestamps matter") {
    // Exchanging the timestamps of frames 0 and 1 while holding contents fixed
    // is the same as exchanging the contents under fixed timestamps.
    auto swapped = window;
    std::swap(swapped[0], swapped[1]);
    std::swap(swapped[0].t, swapped[1].t);
    const auto a = planner.encode_4d(window).tokens.value();
    const auto b = planner.encode_4d(swapped).tokens.value();
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
    CHECK(diff > 1e-9);

    // Same contents, shifted timestamps for the older frames only.
    auto shifted = window;
    shifted[0].t -= 0.5;
    const auto c = planner.encode_4d(shifted).tokens.value();
    CHECK_FALSE(bitwise_equal(a, c));
  }
  SUBCASE("errors") {
    auto short_window = window;
    short_window.pop_back();
    CHECK_THROWS_AS(planner.encode_4d(short_window), std::invalid_argument);
    auto bad = window;
    bad[2].t = bad[1].t;
    CHECK_THROWS_AS(planner.encode_4d(bad), std::invalid_argument);
  }
}

TEST_CASE("2D modality drops geometry") {
  nn::ParameterSet ps;
  nn::Rng rng(4);
  auto cfg = small_config();
  cfg.modality = Modality::Grid2D;
  Planner planner(ps, cfg, rng);
  auto w = sample_window(1);
  const auto a = planner.encode_4d(w).tokens.value();
  w[0].geometry[0] += 0.3;
  w[0].proprio[0] += 0.3;
  const auto b = planner.encode_4d(w).tokens.value();
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("plan structure and determinism") {
  nn::ParameterSet ps;
  nn::Rng rng(5);
  const auto cfg = small_config();
  Planner planner(ps, cfg, rng);
  const auto obs = planner.encode_4d(sample_window(cfg.window));
  const auto spec = world::sample_task(9, world::Suite::ObjectRecognition);
  const auto out = planner.forward(obs, spec.instruction, {}, cfg.horizon);
  REQUIRE(out.prompts.size() == cfg.horizon);
  for (const auto& p : out.prompts) {
    CHECK(p.semantic.rows() + p.spatial.rows() + p.temporal.rows() == cfg.semantic_tokens + 2);
    CHECK(p.logits.rows() == world::kMaxDescription);
    CHECK(p.logits.cols() == world::kVocabSize);
  }
  const auto a = planner.plan(obs, spec.instruction, {{world::done_description()}});
  const auto b = planner.plan(obs, spec.instruction, {{world::done_description()}});
  REQUIRE(a.size() == cfg.horizon);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].index == k);
    CHECK(a[k].description == b[k].description);
    CHECK(a[k].duration == b[k].duration);
    CHECK(a[k].duration > 0.0);
    CHECK(a[k].truncated == (a[k].description.back() != world::tok::Eos));
    CHECK(bitwise_equal(a[k].semantic, b[k].semantic));
  }
}

TEST_CASE("causal planning exactness") {
  nn::ParameterSet ps;
  nn::Rng rng(6);
  auto cfg = small_config();
  cfg.horizon = 4;
  Planner planner(ps, cfg, rng);
  const auto obs = planner.encode_4d(sample_window(cfg.window));
  const auto spec = world::sample_task(2, world::Suite::LongHorizon);
  nn::NoGradGuard guard;
  const Var ctx = planner.context_tokens(obs, spec.instruction, {});
  const Var prompts = planner.prompt_inputs(cfg.horizon);
  const auto base = planner.run(ctx, prompts, cfg.horizon);
  const std::size_t B = cfg.semantic_tokens + 2;
  for (std::size_t k = 0; k + 1 < cfg.horizon; ++k) {
    Tensor edited = prompts.value();
    for (std::size_t r = (k + 1) * B; r < cfg.horizon * B; ++r)
      for (std::size_t c = 0; c < edited.cols(); ++c) edited.at(r, c) = (r + c) % 2 ? 0.0 : 3.5;
    const auto out = planner.run(ctx, Var(edited), cfg.horizon);
    for (std::size_t j = 0; j <= k; ++j) {
      CHECK(bitwise_equal(out.prompts[j].semantic.value(), base.prompts[j].semantic.value()));
      CHECK(bitwise_equal(out.prompts[j].logits.value(), base.prompts[j].logits.value()));
      CHECK(bitwise_equal(out.prompts[j].box.value(), base.prompts[j].box.value()));
      CHECK(bitwise_equal(out.prompts[j].duration.value(), base.prompts[j].duration.value()));
    }
    CHECK_FALSE(bitwise_equal(out.prompts[k + 1].semantic.value(), base.prompts[k + 1].semantic.value()));
  }
}

TEST_CASE("head separation") {
  nn::ParameterSet ps;
  nn::Rng rng(8);
  const auto cfg = small_config();
  Planner planner(ps, cfg, rng);
  const auto obs = planner.encode_4d(sample_window(cfg.window));
  const auto spec = world::sample_task(3, world::Suite::ObjectRecognition);

  const auto grads_of = [&](const VlmWeights& w) {
    ps.zero_grad();
    const auto out = planner.forward(obs, spec.instruction, {}, 1);
    PromptTarget t{world::done_description(), world::Box{{0.3, 0.3, 0.05}, {0.04, 0.04, 0.04}}, 1.5};
    const auto loss = vlm_loss(out.prompts, {t}, w);
    nn::backward(loss.total);
  };
  const auto nonzero = [&](const std::string& path) {
    const Var& v = ps.at(path);
    if (!v.has_grad()) return false;
    for (std::size_t i = 0; i < v.grad().size(); ++i)
      if (v.grad().data()[i] != 0.0) return true;
    return false;
  };

  grads_of({0.0, 1.0, 0.0});
  CHECK(nonzero("planner.head.spatial.weight"));
  CHECK_FALSE(nonzero("planner.head.language.weight"));
  CHECK_FALSE(nonzero("planner.head.temporal.weight"));

  grads_of({1.0, 0.0, 0.0});
  CHECK(nonzero("planner.head.language.weight"));
  CHECK_FALSE(nonzero("planner.head.spatial.weight"));
  CHECK_FALSE(nonzero("planner.head.temporal.weight"));
}

TEST_CASE("decoding transforms") {
  CHECK(decode_duration(-3.0) > 0.0);
  CHECK(decode_duration(0.0) > 0.0);
  const world::WorldConfig wc;
  const auto b = decode_box(Tensor({6}, std::vector<double>{-1.0, 2.0, 0.1, 0.0, 5.0, 0.02}));
  CHECK(b.intersects(wc.workspace()));
  CHECK(b.extent.x > 0.0);
}

TEST_CASE("vlm_loss arithmetic") {
  const VlmWeights defaults;
  CHECK(defaults.language == 1.0);
  CHECK(defaults.spatial == 5.0);
  CHECK(defaults.temporal == 5.0);

  const world::Box truth{{0.3, 0.4, 0.05}, {0.04, 0.04, 0.04}};
  const auto flat = truth.flat();
  PromptOutput p;
  p.logits = Var(Tensor({world::kMaxDescription, world::kVocabSize}, 0.0));
  p.box = Var(Tensor({1, 6}, std::vector<double>(flat.begin(), flat.end())));
  p.duration = Var(Tensor({1, 1}, 2.0));
  PromptTarget t{world::done_description(), truth, 2.0};

  const auto exact = vlm_loss({p}, {t}, {1.0, 1.0, 1.0});
  CHECK(exact.spatial == 0.0);
  CHECK(exact.temporal == 0.0);
  CHECK(exact.paired == 1);
  CHECK_FALSE(exact.truncated);

  Tensor off = p.box.value();
  for (std::size_t i = 0; i < 3; ++i) off.data()[i] += 0.1;
  PromptOutput q = p;
  q.box = Var(off);
  const auto shifted = vlm_loss({q}, {t}, {0.0, 1.0, 0.0});
  CHECK(shifted.spatial == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(shifted.total.value().item() == doctest::Approx(0.3).epsilon(1e-12));

  const auto uneven = vlm_loss({p, p}, {t}, defaults);
  CHECK(uneven.paired == 1);
  CHECK(uneven.truncated);
  // uniform logits: CE per token is log V
  CHECK(uneven.language == doctest::Approx(std::log(static_cast<double>(world::kVocabSize))));
}

TEST_CASE("prompt targets pad with done") {
  world::SubTaskAnnotation a;
  a.description = world::describe({world::Verb::Reach, {world::Color::Red, world::Shape::Cube}, {}});
  a.box = world::Box{{0.1, 0.1, 0.1}, {0.04, 0.04, 0.04}};
  a.duration = 1.0;
  const auto t = prompt_targets({a, a}, 1, 3);
  REQUIRE(t.size() == 3);
  CHECK(t[0].box.has_value());
  CHECK(t[1].description == world::done_description());
  CHECK_FALSE(t[2].duration.has_value());
}

TEST_CASE("rolling controller contract") {
  std::size_t calls = 0;
  auto plan = [&](const std::vector<std::vector<int>>& history) {
    ++calls;
    std::vector<ActionPrompt> out(3);
    for (std::size_t k = 0; k < 3; ++k) {
      out[k].index = k;
      out[k].duration = 1.5;
      out[k].description = {static_cast<int>(history.size() + world::tok::VerbBase) % 5 + world::tok::VerbBase,
                            world::tok::Eos};
    }
    return out;
  };
  RollingController ctl(plan, {2.0, 3});
  const auto first = ctl.start().description;
  CHECK(calls == 1);

  SUBCASE("no signal keeps the prompt") {
    const auto& p = ctl.update({false, 0.5});
    CHECK(p.description == first);
    CHECK(ctl.prompt_index() == 0);
    CHECK(calls == 1);
  }
  SUBCASE("sub-goal advances by one and replans") {
    ctl.update({true, 0.2});
    CHECK(ctl.prompt_index() == 1);
    CHECK(calls == 2);
    CHECK(ctl.history().back() == first);
  }
  SUBCASE("time fallback at beta * duration") {
    ctl.update({false, 2.999});
    CHECK(ctl.prompt_index() == 0);
    ctl.update({false, 3.0});
    CHECK(ctl.prompt_index() == 1);
  }
  SUBCASE("replan cap") {
    for (int i = 0; i < 3; ++i) ctl.update({true, 0.0});
    CHECK_THROWS_AS(ctl.update({true, 0.0}), ReplanLimitExceeded);
  }
}

TEST_CASE("plan trace line") {
  PlanTraceRow row;
  row.episode = 2;
  row.k = 1;
  row.predicted.description = world::done_description();
  row.predicted.duration = 0.5;
  const auto line = plan_trace_line(row);
  CHECK(line.find("\"episode\":2") != std::string::npos);
  CHECK(line.find("\"truth\":null") != std::string::npos);
}
