#include <cmath>

#include "doctest.h"
#include "stpi/ae/expert.hpp"
#include "stpi/nn/ops.hpp"
#include "stpi/world/dynamics.hpp"
#include "stpi/world/vocab.hpp"

using namespace stpi;
using namespace stpi::ae;
using nn::Tensor;
using nn::Var;

namespace {

ExpertConfig small_config() {
  ExpertConfig c;
  c.d_model = 16;
  c.layers = 2;
  c.heads = 2;
  c.horizon = 4;
  c.denoise_steps = 5;
  c.fourier = 3;
  c.planner_d = 12;
  c.semantic_tokens = 2;
  return c;
}

Condition random_condition(const ExpertConfig& cfg, nn::Rng& rng) {
  Condition c;
  c.frame = Var(rng.normal_tensor({vlm::kTokensPerFrame, cfg.planner_d}));
  c.semantic = Var(rng.normal_tensor({cfg.semantic_tokens, cfg.planner_d}));
  c.spatial = Var(rng.normal_tensor({1, cfg.planner_d}));
  c.temporal = Var(rng.normal_tensor({1, cfg.planner_d}));
  c.box = world::Box{{0.3, 0.5, 0.05}, {0.04, 0.04, 0.04}};
  c.duration = 1.2;
  c.elapsed = 0.3;
  c.proprio = {0.4, 0.35, 0.15, 0.0, 1.0, 0.0};
  c.instruction = {world::tok::Touch, world::tok::ColorBase, world::tok::ShapeBase, world::tok::SpeedBase + 1};
  return c;
}

}  // namespace

TEST_CASE("action masks") {
  SUBCASE("H=1 identical") {
    const auto [s, t] = build_action_masks(1, 3);
    CHECK(s == t);
  }
  SUBCASE("H=3 sub-blocks") {
    const std::size_t C = 2;
    const auto [s, t] = build_action_masks(3, C);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(s.allowed(C + i, C + j));
        CHECK(t.allowed(C + i, C + j) == (j <= i));
      }
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        CHECK(s.allowed(C + i, c));
        CHECK(t.allowed(C + i, c));
        CHECK_FALSE(s.allowed(c, C + i));
        CHECK_FALSE(t.allowed(c, C + i));
      }
  }
  CHECK_THROWS_AS(build_action_masks(0, 2), std::invalid_argument);
}

TEST_CASE("fuse_flows") {
  nn::Rng rng(1);
  const Tensor vs = rng.normal_tensor({4, 6}), vt = rng.normal_tensor({4, 6});
  CHECK(nn::bitwise_equal(fuse_flows(vs, vt, 0, 10), vs));
  CHECK(nn::bitwise_equal(fuse_flows(vs, vt, 10, 10), vt));
  const Tensor mid = fuse_flows(vs, vt, 5, 10);
  for (std::size_t i = 0; i < mid.size(); ++i) CHECK(mid[i] == doctest::Approx((vs[i] + vt[i]) / 2).epsilon(1e-15));
  CHECK_THROWS_AS(fuse_flows(vs, vt, 11, 10), std::invalid_argument);
  CHECK_THROWS_AS(fuse_flows(vs, vt, -1, 10), std::invalid_argument);
  CHECK_THROWS_AS(fuse_flows(vs, Tensor({3, 6}), 1, 10), std::invalid_argument);
}

TEST_CASE("fm_pair") {
  nn::Rng rng(2);
  const Tensor a = rng.normal_tensor({4, 6}), w = rng.normal_tensor({4, 6});
  const auto one = fm_pair(a, 1.0, w);
  const auto zero = fm_pair(a, 0.0, w);
  CHECK(nn::bitwise_equal(one.noisy, a));
  CHECK(nn::bitwise_equal(zero.noisy, w));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(one.target[i] == a[i] - w[i]);
    CHECK(zero.target[i] == a[i] - w[i]);
  }
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const Tensor as = rng.normal_tensor({4, 6}), om = rng.normal_tensor({4, 6});
    const double tau = rng.uniform();
    const auto p = fm_pair(as, tau, om);
    for (std::size_t i = 0; i < as.size(); ++i)
      worst = std::max(worst, std::abs(p.noisy[i] - om[i] - tau * p.target[i]));
  }
  CHECK(worst < 1e-12);
  CHECK_THROWS_AS(fm_pair(a, 1.5, w), std::invalid_argument);
  CHECK_THROWS_AS(fm_pair(a, -0.1, w), std::invalid_argument);
}

TEST_CASE("ae_loss") {
  nn::Rng rng(3);
  const Tensor u = rng.normal_tensor({4, 6});
  CHECK(ae_loss(Var(u), u).value().item() == 0.0);
  Tensor off = u;
  for (auto& v : off.values()) v += 0.5;
  CHECK(ae_loss(Var(off), u).value().item() == doctest::Approx(0.25).epsilon(1e-14));
  for (int n = 0; n < 20; ++n) CHECK(ae_loss(Var(rng.normal_tensor({4, 6})), u).value().item() >= 0.0);
  CHECK_THROWS_AS(ae_loss(Var(Tensor({3, 6})), u), std::invalid_argument);
}

TEST_CASE("integration with an oracle field") {
  nn::Rng rng(4);
  const Tensor a_star = rng.normal_tensor({8, 6});
  for (std::size_t T : {1u, 2u, 10u, 100u}) {
    const Tensor omega = rng.normal_tensor({8, 6});
    const auto u = fm_pair(a_star, 0.0, omega).target;
    const FlowFn stub = [&](Branch, const Tensor&, std::size_t) { return u; };
    const Tensor out = integrate_flow(omega, T, stub);
    CHECK(nn::max_abs_diff(out, a_star) < 1e-12);
  }
  SUBCASE("T=1 takes one spatial step") {
    const Tensor omega = rng.normal_tensor({8, 6});
    const Tensor vs = rng.normal_tensor({8, 6}), vt = rng.normal_tensor({8, 6});
    const FlowFn f = [&](Branch b, const Tensor&, std::size_t) { return b == Branch::Spatial ? vs : vt; };
    const Tensor out = integrate_flow(omega, 1, f);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == omega[i] + vs[i]);
  }
  SUBCASE("non-finite flow names tau") {
    const FlowFn bad = [&](Branch, const Tensor& a, std::size_t i) {
      Tensor v(a.shape(), 0.0);
      if (i == 3) v[0] = std::nan("");
      return v;
    };
    try {
      integrate_flow(Tensor({8, 6}, 0.0), 10, bad);
      FAIL("expected throw");
    } catch (const nn::NonFiniteError& e) {
      CHECK(std::string(e.what()).find("tau index 3") != std::string::npos);
    }
  }
}

TEST_CASE("generator flows") {
  nn::ParameterSet ps;
  nn::Rng rng(5);
  const auto cfg = small_config();
  ActionExpert ex(ps, cfg, rng);
  const Condition c = random_condition(cfg, rng);
  const Tensor a = rng.normal_tensor({cfg.horizon, 6});
  nn::NoGradGuard guard;

  SUBCASE("shape") {
    CHECK(ex.generator_flow(Branch::Spatial, c, Var(a), 0.3).shape() == nn::Shape{cfg.horizon, 6});
    CHECK(ex.generator_flow(Branch::Temporal, c, Var(a), 0.3).shape() == nn::Shape{cfg.horizon, 6});
  }
  SUBCASE("temporal causality") {
    const Tensor base = ex.generator_flow(Branch::Temporal, c, Var(a), 0.4).value();
    for (std::size_t j = 0; j < cfg.horizon; ++j) {
      Tensor p = a;
      for (std::size_t d = 0; d < 6; ++d) p.at(j, d) += rng.normal();
      const Tensor out = ex.generator_flow(Branch::Temporal, c, Var(p), 0.4).value();
      for (std::size_t i = 0; i < j; ++i)
        for (std::size_t d = 0; d < 6; ++d) CHECK(out.at(i, d) == base.at(i, d));
    }
  }
  SUBCASE("spatial cross-step influence") {
    const Tensor base = ex.generator_flow(Branch::Spatial, c, Var(a), 0.4).value();
    Tensor p = a;
    p.at(cfg.horizon - 1, 0) += 1.0;
    const Tensor out = ex.generator_flow(Branch::Spatial, c, Var(p), 0.4).value();
    double d0 = 0.0;
    for (std::size_t d = 0; d < 6; ++d) d0 = std::max(d0, std::abs(out.at(0, d) - base.at(0, d)));
    CHECK(d0 > 1e-9);
  }
  SUBCASE("fused flow endpoints") {
    CHECK(nn::bitwise_equal(ex.flow(c, Var(a), 0.0).value(), ex.generator_flow(Branch::Spatial, c, Var(a), 0.0).value()));
    CHECK(nn::bitwise_equal(ex.flow(c, Var(a), 1.0).value(), ex.generator_flow(Branch::Temporal, c, Var(a), 1.0).value()));
  }
  SUBCASE("branches see different conditioning") {
    CHECK_FALSE(nn::bitwise_equal(ex.generator_flow(Branch::Spatial, c, Var(a), 0.5).value(),
                                  ex.generator_flow(Branch::Temporal, c, Var(a), 0.5).value()));
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(ex.generator_flow(Branch::Spatial, c, Var(Tensor({cfg.horizon + 1, 6})), 0.1),
                    std::invalid_argument);
    Condition bad = c;
    bad.proprio.pop_back();
    CHECK_THROWS_AS(ex.generator_flow(Branch::Spatial, bad, Var(a), 0.1), std::invalid_argument);
  }
}

TEST_CASE("sample_chunk") {
  nn::ParameterSet ps;
  nn::Rng rng(6);
  const auto cfg = small_config();
  ActionExpert ex(ps, cfg, rng);
  ex.set_normalization({0, 0, 0, 0, 0.5, 0.1}, {0.02, 0.02, 0.02, 0.1, 0.5, 0.05});
  const Condition c = random_condition(cfg, rng);
  std::vector<SamplerTraceRow> trace;
  const auto a = ex.sample_chunk(c, 99, 0, &trace);
  const auto b = ex.sample_chunk(c, 99);
  REQUIRE(a.size() == cfg.horizon);
  CHECK(a == b);
  CHECK(trace.size() == cfg.denoise_steps);
  CHECK(trace.front().alpha == 0.0);
  const world::WorldConfig wc;
  for (const auto& s : a) CHECK_NOTHROW(world::validate_action(s, wc));
  CHECK_FALSE(ex.sample_chunk(c, 100) == a);
}

TEST_CASE("normalization round trip") {
  nn::ParameterSet ps;
  nn::Rng rng(7);
  const auto cfg = small_config();
  ActionExpert ex(ps, cfg, rng);
  std::vector<world::ActionStep> steps;
  for (std::size_t i = 0; i < cfg.horizon; ++i) steps.push_back({{0.01 * i, -0.01, 0.0}, 0.05, 0.0, 0.1});
  const auto [mean, scale] = action_statistics(steps);
  CHECK(scale[5] == 1e-3);
  ex.set_normalization(mean, scale);
  const auto back = ex.denormalize(ex.normalize(steps));
  for (std::size_t i = 0; i < steps.size(); ++i) {
    CHECK(back[i].dx.x == doctest::Approx(steps[i].dx.x));
    CHECK(back[i].dt == doctest::Approx(steps[i].dt));
  }
  CHECK(ps.is_buffer("expert.norm.mean"));
  CHECK_THROWS_AS(ex.set_normalization(mean, std::vector<double>(6, 0.0)), std::invalid_argument);
}

TEST_CASE("ablation variants") {
  nn::Rng rng(8);
  SUBCASE("single generator") {
    nn::ParameterSet ps;
    auto cfg = small_config();
    cfg.generator = GeneratorMode::Single;
    ActionExpert ex(ps, cfg, rng);
    const Condition c = random_condition(cfg, rng);
    CHECK(ex.condition_length(c) == vlm::kTokensPerFrame + cfg.semantic_tokens + 3);
    CHECK(ex.sample_chunk(c, 1).size() == cfg.horizon);
  }
  SUBCASE("instruction conditioning ignores prompts") {
    nn::ParameterSet ps;
    auto cfg = small_config();
    cfg.conditioning = Conditioning::Instruction;
    ActionExpert ex(ps, cfg, rng);
    Condition c = random_condition(cfg, rng);
    const Tensor a = rng.normal_tensor({cfg.horizon, 6});
    const Tensor base = ex.flow(c, Var(a), 0.5).value();
    c.semantic = Var(rng.normal_tensor({cfg.semantic_tokens, cfg.planner_d}));
    c.box.center.x += 0.1;
    c.duration += 1.0;
    CHECK(nn::bitwise_equal(ex.flow(c, Var(a), 0.5).value(), base));
  }
  SUBCASE("training loss backpropagates into the shared backbone") {
    nn::ParameterSet ps;
    auto cfg = small_config();
    ActionExpert ex(ps, cfg, rng);
    const Condition c = random_condition(cfg, rng);
    const auto loss = ex.training_loss(c, rng.normal_tensor({cfg.horizon, 6}), 0.5, rng.normal_tensor({cfg.horizon, 6}));
    nn::backward(loss);
    CHECK(ps.at("expert.backbone.0.attn.q.weight").has_grad());
    CHECK(ps.at("expert.cond.box.weight").has_grad());
    CHECK(ps.at("expert.cond.timing.weight").has_grad());
    CHECK_FALSE(ps.at("expert.cond.instr_embed").has_grad());
  }
}
