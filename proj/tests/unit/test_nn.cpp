#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "stpi/nn/checkpoint.hpp"
#include "stpi/nn/fourier.hpp"
#include "stpi/nn/layers.hpp"
#include "stpi/nn/optim.hpp"
#include "support/blocks.hpp"
#include "support/gradcheck.hpp"

using namespace stpi::nn;

TEST_CASE("fourier encoding") {
  CHECK(fourier_encode(0.0, 2) == std::vector<double>{0.0, 1.0, 0.0, 1.0});
  const auto half = fourier_encode(0.5, 1);
  REQUIRE(half.size() == 2);
  CHECK(half[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(half[1]) < 1e-15);
  CHECK(fourier_encode(0.37, 8) == fourier_encode(0.37, 8));
  CHECK(fourier_encode(0.1, 8).size() == 16);
  CHECK_THROWS_AS(fourier_encode(std::nan(""), 2), std::invalid_argument);
  CHECK_THROWS_AS(fourier_encode(INFINITY, 2), std::invalid_argument);
  CHECK_THROWS_AS(fourier_encode(0.2, 0), std::invalid_argument);
}

TEST_CASE("masked attention: single token returns its value") {
  Var q(Tensor::matrix(1, 2, {0.3, -1.2})), k(Tensor::matrix(1, 2, {2.0, 0.5})), v(Tensor::matrix(1, 2, {4.0, -7.0}));
  const Var out = masked_attention(q, k, v, AttentionMask::full(1), 1);
  CHECK(bitwise_equal(out.value(), v.value()));
}

TEST_CASE("masked attention: equal logits average the values") {
  Var q(Tensor({3, 2}, 0.0)), k(Tensor({3, 2}, 1.0));
  Var v(Tensor::matrix(3, 2, {1.0, 2.0, 3.0, 4.0, 5.0, 9.0}));
  const Var out = masked_attention(q, k, v, AttentionMask::full(3), 2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out.value().at(i, 0) == doctest::Approx(3.0));
    CHECK(out.value().at(i, 1) == doctest::Approx(5.0));
  }
}

TEST_CASE("masked attention: causal mask hides later positions exactly") {
  Rng rng(7);
  Tensor q = rng.normal_tensor({3, 4}), k = rng.normal_tensor({3, 4}), v = rng.normal_tensor({3, 4});
  const auto mask = AttentionMask::causal(3);
  const Tensor base = masked_attention(Var(q), Var(k), Var(v), mask, 2).value();
  for (int trial = 0; trial < 20; ++trial) {
    Tensor k2 = k, v2 = v, q2 = q;
    for (std::size_t c = 0; c < 4; ++c) {
      k2.at(2, c) = rng.normal(0, 50);
      v2.at(2, c) = rng.normal(0, 50);
      q2.at(2, c) = rng.normal(0, 50);
    }
    const Tensor out = masked_attention(Var(q2), Var(k2), Var(v2), mask, 2).value();
    CHECK(bitwise_equal(out.row_slice(0, 2), base.row_slice(0, 2)));
  }
}

TEST_CASE("masked attention: errors") {
  Var x(Tensor({2, 4}, 1.0));
  AttentionMask empty_row(2, 2, true);
  empty_row.set(1, 0, false);
  empty_row.set(1, 1, false);
  CHECK_THROWS_AS(masked_attention(x, x, x, empty_row, 2), std::invalid_argument);
  CHECK_THROWS_AS(masked_attention(x, x, x, AttentionMask::full(3), 2), std::invalid_argument);
  CHECK_THROWS_AS(masked_attention(x, x, x, AttentionMask::full(2), 3), std::invalid_argument);
}

TEST_CASE("backward: analytic derivative, isolation, errors") {
  Var x(Tensor::scalar(3.0), true);
  Var unused(Tensor::scalar(1.5), true);
  Var loss = mul(x, x);
  backward(loss);
  CHECK(x.grad().item() == 6.0);
  CHECK_FALSE(unused.has_grad());

  CHECK_THROWS_AS(backward(loss), std::logic_error);
  x.zero_grad();
  reset_graph(loss);
  backward(loss);
  CHECK(x.grad().item() == 6.0);

  Var vec(Tensor({2}, 1.0), true);
  CHECK_THROWS_AS(backward(scale(vec, 2.0)), std::invalid_argument);

  Var y(Tensor::scalar(-1.0), true);
  // log1p(exp(v)) for v = 800 overflows inside the gradient of a product chain
  Var big(Tensor::scalar(1e308), true);
  Var overflow = mul(big, big);
  CHECK_THROWS_AS(backward(overflow), NonFiniteError);
  (void)y;
}

TEST_CASE("backward: gradient of a parameter with no path is exactly zero") {
  ParameterSet ps;
  Rng rng(1);
  auto a = Linear::create(ps, "a", 3, 2, rng);
  auto b = Linear::create(ps, "b", 3, 2, rng);
  Var x(rng.normal_tensor({2, 3}));
  backward(sum(a(x)));
  CHECK(ps.at("a.weight").has_grad());
  CHECK_FALSE(ps.at("b.weight").has_grad());
  (void)b;
}

TEST_CASE("gradients match central finite differences for every block") {
  Rng rng(2024);
  for (const auto& factory : stpi::testing::block_factories()) {
    for (int i = 0; i < 3; ++i) {
      auto inst = factory.make(rng);
      const auto res = stpi::testing::gradcheck(inst.leaves, inst.loss);
      INFO(factory.name);
      CHECK(res.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("adamw: first step, pure decay, determinism") {
  Tensor p = Tensor::scalar(1.0);
  Tensor g = Tensor::scalar(0.25);
  OptimState st;
  st.lr = 0.01;
  adamw_step({&p}, {&g}, st);
  CHECK(p.item() == doctest::Approx(1.0 - 0.01 * 0.25 / (0.25 + 1e-8)).epsilon(1e-14));
  CHECK(st.step == 1);

  Tensor q = Tensor::scalar(2.0);
  Tensor zero = Tensor::scalar(0.0);
  OptimState decay;
  decay.lr = 0.1;
  decay.weight_decay = 0.5;
  adamw_step({&q}, {&zero}, decay);
  CHECK(q.item() == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-15));

  auto run = [] {
    Rng rng(5);
    Tensor w = rng.normal_tensor({3, 3});
    OptimState s;
    s.lr = 0.05;
    s.weight_decay = 0.01;
    for (int i = 0; i < 10; ++i) {
      Tensor gr = rng.normal_tensor({3, 3});
      adamw_step({&w}, {&gr}, s);
    }
    return w;
  };
  CHECK(bitwise_equal(run(), run()));

  Tensor bad = Tensor::scalar(std::nan(""));
  CHECK_THROWS_AS(adamw_step({&p}, {&bad}, st), NonFiniteError);
  Tensor wrong({2}, 0.0);
  CHECK_THROWS_AS(adamw_step({&p}, {&wrong}, st), std::invalid_argument);
}

TEST_CASE("lora: neutral at init, freeze contract, rank precondition") {
  ParameterSet ps;
  Rng rng(3);
  auto base = Linear::create(ps, "fc", 6, 4, rng);
  Var x(rng.normal_tensor({3, 6}));
  const Tensor plain = linear(x, base.weight, base.bias).value();
  base.attach_lora(ps, "fc", 2, rng);
  CHECK(bitwise_equal(base(x).value(), plain));

  ps.freeze({"fc.weight", "fc.bias"});
  const auto before = ps.hash({"fc.weight", "fc.bias"});
  const Tensor up_before = ps.at("fc.lora.up").value();
  backward(sum(base(x)));
  AdamW opt(1e-2, 0.0);
  opt.step(ps);
  CHECK(ps.hash({"fc.weight", "fc.bias"}) == before);
  CHECK_FALSE(bitwise_equal(ps.at("fc.lora.up").value(), up_before));

  ParameterSet ps2;
  auto l2 = Linear::create(ps2, "fc", 6, 4, rng);
  CHECK_THROWS_AS(l2.attach_lora(ps2, "fc", 4, rng), std::invalid_argument);
  LoraAdapter bad{4, Var(Tensor({6, 4}, 0.0)), Var(Tensor({4, 4}, 0.0))};
  CHECK_THROWS_AS(lora_forward(l2, bad, x), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ParameterSet ps;
  Rng rng(11);
  Linear::create(ps, "enc.fc", 5, 3, rng);
  ps.add_buffer("norm.mean", Tensor::row({0.1, 1.0 / 3.0, -2.5e-300}));
  const auto file = std::filesystem::temp_directory_path() / "stpi_ckpt_test.bin";
  write_checkpoint(file, ps, "planner.d_model=8\n");
  const Checkpoint ck = read_checkpoint(file);
  CHECK(ck.metadata == "planner.d_model=8\n");
  CHECK(ck.entries.at("norm.mean").buffer);

  ParameterSet other;
  Rng rng2(99);
  Linear::create(other, "enc.fc", 5, 3, rng2);
  other.add_buffer("norm.mean", Tensor({3}, 0.0));
  load_into(ck, other);
  CHECK(other.hash_all() == ps.hash_all());

  ParameterSet mismatched;
  Linear::create(mismatched, "enc.fc", 4, 3, rng2);
  mismatched.add_buffer("norm.mean", Tensor({3}, 0.0));
  CHECK_THROWS_AS(load_into(ck, mismatched), std::runtime_error);
  std::filesystem::remove(file);
}

TEST_CASE("parameter freezing by prefix") {
  ParameterSet ps;
  Rng rng(1);
  Linear::create(ps, "a.b", 2, 2, rng);
  Linear::create(ps, "a.bc", 2, 2, rng);
  ps.freeze({"a.b"});
  CHECK_FALSE(ps.at("a.b.weight").requires_grad());
  CHECK(ps.at("a.bc.weight").requires_grad());
  CHECK_THROWS_AS(ps.freeze({"missing"}), std::invalid_argument);
}
