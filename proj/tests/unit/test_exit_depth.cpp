// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "anira/exit_depth.hpp"
#include "anira/error.hpp"
#include "../support/oracles.hpp"

using namespace anira;
using namespace anira::testing;

TEST_CASE("halting recursion") {
  const std::vector<double> half{0.5, 0.5};
  auto d = ExitDepthDistribution::from_halting(half);
  CHECK(d.q == std::vector<double>{0.5, 0.25, 0.25});
  CHECK(d.cdf == std::vector<double>{0.5, 0.75, 1.0});

  const std::vector<double> first{1.0, 0.3};
  CHECK(ExitDepthDistribution::from_halting(first).q == std::vector<double>{1.0, 0.0, 0.0});
  const std::vector<double> never{0.0, 0.0};
  CHECK(ExitDepthDistribution::from_halting(never).q == std::vector<double>{0.0, 0.0, 1.0});

  const std::vector<double> bad{1.2, 0.1};
  CHECK_THROWS_AS(ExitDepthDistribution::from_halting(bad), ContractError);
  CHECK(ExitDepthDistribution::from_halting(std::vector<double>{}).q == std::vector<double>{1.0});
}

TEST_CASE("random halting distributions normalise") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto depth = static_cast<std::size_t>(rng.integer(1, 16));
    std::vector<double> alphas(depth - 1);
    for (auto& a : alphas) a = rng.uniform();
    auto d = ExitDepthDistribution::from_halting(alphas);
    double sum = 0.0;
    for (double q : d.q) {
      CHECK(q >= 0.0);
      sum += q;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK(std::abs(d.cdf.back() - 1.0) < 1e-9);
    for (std::size_t i = 1; i < d.cdf.size(); ++i) CHECK(d.cdf[i] >= d.cdf[i - 1]);
    // q(d) = r^(d-1) alpha^(d)
    for (std::size_t k = 0; k + 1 < depth; ++k) CHECK(d.q[k] == doctest::Approx(d.survival[k] * alphas[k]).epsilon(1e-12));
    CHECK(d.q.back() == doctest::Approx(d.survival.back()).epsilon(1e-12));
  }
}

TEST_CASE("inverse CDF uses >= at the boundary") {
  auto d = ExitDepthDistribution::from_probs({0.2, 0.2, 0.6});
  CHECK(inverse_cdf_sample(d, 0.5) == 3);
  CHECK(inverse_cdf_sample(d, 0.2) == 1);
  CHECK(inverse_cdf_sample(d, 0.0) == 1);
  // Shortfall of the last CDF entry clamps to D.
  const std::vector<double> short_cdf{0.3, 0.9999999};
  CHECK(inverse_cdf_sample(short_cdf, 1.0) == 2);
}

TEST_CASE("online rules on alpha (0.5, 0.5)") {
  auto d = ExitDepthDistribution::from_halting(std::vector<double>{0.5, 0.5});
  CHECK(inverse_cdf_sample(d, DepthRule::median().level()) == 1);
  CHECK(inverse_cdf_sample(d, DepthRule::at_threshold(0.9).level()) == 3);
  OnlineHalting h(3, 0.9);
  CHECK_FALSE(h.step(0.5));
  CHECK_FALSE(h.step(0.5));
  CHECK(h.exit_depth() == 3);
  CHECK_THROWS_AS(h.step(0.5), ContractError);
}

TEST_CASE("stepwise halting agrees with the closed-form CDF") {
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto depth = static_cast<std::size_t>(rng.integer(1, 10));
    std::vector<double> alphas(depth - 1);
    for (auto& a : alphas) a = rng.uniform();
    const double u = rng.uniform();
    auto d = ExitDepthDistribution::from_halting(alphas);
    OnlineHalting h(depth, u);
    for (std::size_t k = 0; k + 1 < depth && !h.halted(); ++k) h.step(alphas[k]);
    CHECK(h.exit_depth() == inverse_cdf_sample(d, u));
  }
}

TEST_CASE("modal depth and shift invariance") {
  CHECK(modal_depth(std::vector<double>{0.1, 0.7, 0.2}) == 2);
  CHECK(modal_depth(std::vector<double>{0.4, 0.2, 0.4}) == 1);
  const std::vector<double> s{0.3, 1.2, -0.4, 1.1};
  std::vector<double> shifted = s;
  for (auto& v : shifted) v += 17.5;
  CHECK(modal_depth(softmax(s)) == modal_depth(softmax(shifted)));
}

TEST_CASE("depth rule parsing") {
  CHECK(DepthRule::parse("modal").kind == DepthRule::Kind::modal);
  CHECK(DepthRule::parse("median").level() == 0.5);
  CHECK(DepthRule::parse("threshold:0.7").level() == doctest::Approx(0.7));
  CHECK(DepthRule::parse(DepthRule::at_threshold(0.25).name()).level() == doctest::Approx(0.25));
  CHECK_THROWS_AS(DepthRule::parse("mean"), ContractError);
  CHECK_THROWS_AS(DepthRule::parse("threshold:1.5"), ContractError);
}

TEST_CASE("gumbel straight-through sample") {
  Rng rng(1);
  auto g = gumbel_st_sample(std::vector<double>{10.0, 0.0, 0.0}, 1.0, rng, true);
  CHECK(g.depth == 1);
  double sum = 0.0;
  for (double p : g.soft) sum += p;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sampled depth frequencies match their targets") {
  constexpr int draws = 100000;
  Rng rng(2024);
  const std::vector<double> logits{0.4, -1.0, 1.3, 0.0, -0.2};
  std::vector<double> freq(logits.size(), 0.0);
  for (int i = 0; i < draws; ++i) freq[gumbel_st_sample(logits, 1.0, rng).depth - 1] += 1.0 / draws;
  CHECK(total_variation(freq, softmax(logits)) < 0.01);

  auto d = ExitDepthDistribution::from_probs({0.1, 0.25, 0.05, 0.4, 0.2});
  std::fill(freq.begin(), freq.end(), 0.0);
  for (int i = 0; i < draws; ++i) freq[inverse_cdf_sample(d, rng.uniform()) - 1] += 1.0 / draws;
  CHECK(total_variation(freq, d.q) < 0.01);
}

TEST_CASE("expected depth and entropy") {
  auto d = ExitDepthDistribution::from_probs({0.5, 0.5});
  CHECK(d.expected_depth() == doctest::Approx(1.5));
  CHECK(d.entropy() == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(ExitDepthDistribution::from_probs({0.5, 0.6}).validate(), NumericError);
}
