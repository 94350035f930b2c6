// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "anira/error.hpp"
#include "anira/objective.hpp"
#include "anira/rng.hpp"
#include "../support/oracles.hpp"

using namespace anira;
using namespace anira::testing;

TEST_CASE("exponential prior") {
  CHECK(DepthPrior::exponential(1.0, 4).p == std::vector<double>{0.25, 0.25, 0.25, 0.25});
  auto p = DepthPrior::exponential(2.0, 3).p;
  CHECK(p[0] == doctest::Approx(4.0 / 7).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(2.0 / 7).epsilon(1e-15));
  CHECK(p[2] == doctest::Approx(1.0 / 7).epsilon(1e-15));
  CHECK(DepthPrior::exponential(2.0, 1).p == std::vector<double>{1.0});
  CHECK_THROWS_AS(DepthPrior::exponential(0.9, 3), ContractError);
  CHECK_THROWS_AS(DepthPrior::exponential(2.0, 0), ContractError);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    auto prior = DepthPrior::exponential(1.0 + 3.0 * rng.uniform(), static_cast<std::size_t>(rng.integer(1, 20)));
    double s = 0.0;
    for (std::size_t d = 0; d < prior.p.size(); ++d) {
      s += prior.p[d];
      if (d) CHECK(prior.p[d] <= prior.p[d - 1]);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("KL examples") {
  auto uniform = DepthPrior::exponential(1.0, 4);
  CHECK(kl_divergence(uniform.p, uniform.p) == 0.0);
  const std::vector<double> point{1.0, 0.0, 0.0, 0.0};
  CHECK(kl_divergence(point, uniform.p) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("KL decomposition identity on random triples") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto depth = static_cast<std::size_t>(rng.integer(1, 16));
    const double b = 1.0 + 4.0 * rng.uniform();
    auto q = random_simplex(rng, depth);
    auto prior = DepthPrior::exponential(b, depth);
    const double lib = kl_divergence(q, prior.p);
    const double direct = kl_direct(q, b);
    CHECK(std::abs(lib - direct) < 1e-9);
    CHECK(std::abs(direct - kl_decomposed(q, b)) < 1e-9);
    double z = 0.0;
    for (std::size_t d = 1; d <= depth; ++d) z += std::pow(b, -static_cast<double>(d));
    CHECK(std::abs(prior.log_normalizer() - std::log(z)) < 1e-12);
    CHECK(lib >= -1e-12);
  }
}

TEST_CASE("regularizer is the mean KL over token rows") {
  Tape<double> tape;
  auto prior = DepthPrior::exponential(2.0, 3);
  Tensor<double> q = Tensor<double>::matrix(3, 3);
  const std::vector<std::vector<double>> rows{{0.2, 0.3, 0.5}, prior.p, {1.0, 0.0, 0.0}};
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) q.at(r, c) = rows[r][c];
  const std::vector<std::uint8_t> mask{1, 1, 1};
  auto kl = ops::kl_to_prior(tape.constant(q), prior.p, mask);
  const double expect = (kl_direct(rows[0], 2.0) + 0.0 + kl_direct(rows[2], 2.0)) / 3.0;
  CHECK(kl.value()[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("answer-token cross-entropy") {
  constexpr std::size_t vocab = 9;
  Tape<double> tape;
  auto uniform = tape.constant(Tensor<double>::matrix(2, vocab, 0.7));
  const std::vector<int> targets{3, 5};
  const std::vector<std::uint8_t> both{1, 1}, second{0, 1}, none{0, 0};
  CHECK(ops::cross_entropy(uniform, targets, both).value()[0] == doctest::Approx(std::log(9.0)).epsilon(1e-12));

  Tensor<double> sharp = Tensor<double>::matrix(2, vocab);
  sharp.at(0, 3) = 60.0;
  sharp.at(1, 5) = 60.0;
  CHECK(ops::cross_entropy(tape.constant(sharp), targets, both).value()[0] < 1e-20);

  Rng rng(4);
  Tensor<double> a = Tensor<double>::matrix(2, vocab), b = a;
  for (std::size_t c = 0; c < vocab; ++c) {
    a.at(1, c) = b.at(1, c) = rng.normal();
    a.at(0, c) = rng.normal();
    b.at(0, c) = 10 * rng.normal();
  }
  CHECK(ops::cross_entropy(tape.constant(a), targets, second).value()[0] ==
        ops::cross_entropy(tape.constant(b), targets, second).value()[0]);
  CHECK_THROWS_AS(ops::cross_entropy(uniform, targets, none), ContractError);
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(1, 1000, 1e-3) == doctest::Approx(1e-6));
  CHECK(lr_schedule(500, 1000, 1e-3) == doctest::Approx(5e-4));
  CHECK(lr_schedule(1000, 1000, 1e-3) == 1e-3);
  CHECK(lr_schedule(10000, 1000, 1e-3) == 1e-3);
  CHECK(lr_schedule(1, 0, 1e-3) == 1e-3);
}

TEST_CASE("AdamW") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter<double> p("w", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5}));
    AdamW<double> opt({&p}, {});
    for (int i = 0; i < 5; ++i) opt.step(1e-2);
    CHECK(p.value.storage() == std::vector<double>{1.0, -2.0, 0.5});
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    Parameter<double> p("w", Tensor<double>({2}, std::vector<double>{0.0, 0.0}));
    p.grad.storage() = {3.7, -0.02};
    AdamW<double> opt({&p}, {});
    opt.step(1e-3);
    CHECK(p.value.storage()[0] == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(p.value.storage()[1] == doctest::Approx(1e-3).epsilon(1e-5));
  }
  SUBCASE("decoupled weight decay") {
    Parameter<double> p("w", Tensor<double>({1}, std::vector<double>{2.0}));
    AdamWConfig c;
    c.weight_decay = 0.1;
    AdamW<double> opt({&p}, c);
    opt.step(0.5);
    CHECK(p.value.storage()[0] == doctest::Approx(2.0 * (1.0 - 0.5 * 0.1)));
  }
  SUBCASE("converges on a quadratic") {
    // Reference update rule written out independently.
    const double target = 1.7, lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Parameter<double> p("x", Tensor<double>({1}, std::vector<double>{-3.0}));
    AdamW<double> opt({&p}, {});
    double x = -3.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 500; ++t) {
      p.grad.storage()[0] = 2.0 * (p.value.storage()[0] - target);
      opt.step(lr);
      const double g = 2.0 * (x - target);
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    CHECK(std::abs(p.value.storage()[0] - x) < 1e-12);
    CHECK(std::abs(x - target) < 1e-3);
  }
}

TEST_CASE("gradient clipping") {
  Parameter<double> a("a", Tensor<double>({2}, std::vector<double>{0.0, 0.0}));
  Parameter<double> b("b", Tensor<double>({1}, std::vector<double>{0.0}));
  a.grad.storage() = {3.0, 0.0};
  b.grad.storage() = {4.0};
  CHECK(clip_grad_norm<double>({&a, &b}, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad.storage()[0] == doctest::Approx(0.6));
  CHECK(b.grad.storage()[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm<double>({&a, &b}, 0.0) == doctest::Approx(1.0));
}
