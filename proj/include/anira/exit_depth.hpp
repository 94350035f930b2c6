// SPDX-License-Identifier: Apache-2.0
//
// Per-token exit-depth distributions and the rules that turn them into a
// concrete depth. Depths are 1-based throughout: d in 1..D.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "anira/rng.hpp"

namespace anira {

/// Categorical distribution over depths 1..D with its CDF. For the online
/// decider it also keeps the conditional halting probabilities and the
/// survival mass that generated it.
struct ExitDepthDistribution {
  std::vector<double> q;
  std::vector<double> cdf;
  std::vector<double> alphas;    // online only, size D-1
  std::vector<double> survival;  // online only, r^(0..D-1)

  std::size_t depth() const { return q.size(); }

  /// From an explicit probability vector (renormalised only by validation).
  static ExitDepthDistribution from_probs(std::vector<double> q);
  /// q(d) = r^(d-1) alpha^(d) for d < D, q(D) = r^(D-1), r^(0) = 1.
  static ExitDepthDistribution from_halting(std::span<const double> alphas);

  double expected_depth() const;
  double entropy() const;
  /// Throws NumericError if q is not a distribution within tol.
  void validate(double tol = 1e-9) const;
};

/// d* = min{d : F(d) >= u}, clamped to D against rounding shortfall.
std::size_t inverse_cdf_sample(std::span<const double> cdf, double u);
inline std::size_t inverse_cdf_sample(const ExitDepthDistribution& dist, double u) {
  return inverse_cdf_sample(dist.cdf, u);
}

/// First index of the largest probability, as a depth.
std::size_t modal_depth(std::span<const double> q);

struct GumbelSample {
  std::size_t depth = 1;
  std::vector<double> noise;
  std::vector<double> soft;  // softmax((s + g) / tau)
};

/// Straight-through Gumbel draw over depth logits. zero_noise forces g = 0.
GumbelSample gumbel_st_sample(std::span<const double> logits, double tau, Rng& rng, bool zero_noise = false);

/// Inference-time depth selection.
struct DepthRule {
  enum class Kind { modal, median, threshold };
  Kind kind = Kind::modal;
  double threshold = 0.5;

  static DepthRule modal() { return {Kind::modal, 0.5}; }
  static DepthRule median() { return {Kind::median, 0.5}; }
  static DepthRule at_threshold(double c) { return {Kind::threshold, c}; }
  /// The CDF level used by the online rules.
  double level() const { return kind == Kind::median ? 0.5 : threshold; }
  std::string name() const;
  static DepthRule parse(const std::string& text);
};

/// Step-by-step resolution of an online exit depth: feed alpha^(1), alpha^(2),
/// ... and the token halts at the first d with F(d) >= u. Shared by the
/// batched forward, the cached decoder and the tests so all agree bitwise.
class OnlineHalting {
 public:
  OnlineHalting(std::size_t depth, double u) : depth_(depth), u_(u) {}

  /// Consumes alpha^(d) for the next d < D; returns true if the token halts at d.
  bool step(double alpha);
  bool halted() const { return halted_; }
  /// Exit depth; D while not halted.
  std::size_t exit_depth() const { return halted_ ? exit_ : depth_; }
  std::size_t steps() const { return steps_; }

 private:
  std::size_t depth_;
  double u_;
  double cdf_ = 0.0;
  double remaining_ = 1.0;
  std::size_t steps_ = 0;
  std::size_t exit_ = 0;
  bool halted_ = false;
};

}  // namespace anira
