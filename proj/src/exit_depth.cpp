// SPDX-License-Identifier: Apache-2.0
#include "anira/exit_depth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "anira/error.hpp"

namespace anira {

namespace {

std::vector<double> running_sum(const std::vector<double>& q) {
  std::vector<double> cdf(q.size());
  double acc = 0.0;
  for (std::size_t d = 0; d < q.size(); ++d) cdf[d] = (acc += q[d]);
  return cdf;
}

}  // namespace

ExitDepthDistribution ExitDepthDistribution::from_probs(std::vector<double> q) {
  if (q.empty()) throw ContractError("exit-depth distribution needs D >= 1");
  ExitDepthDistribution dist;
  dist.cdf = running_sum(q);
  dist.q = std::move(q);
  return dist;
}

ExitDepthDistribution ExitDepthDistribution::from_halting(std::span<const double> alphas) {
  ExitDepthDistribution dist;
  const std::size_t depth = alphas.size() + 1;
  dist.q.resize(depth);
  dist.survival.resize(depth);
  dist.alphas.assign(alphas.begin(), alphas.end());
  double remaining = 1.0;
  for (std::size_t d = 0; d + 1 < depth; ++d) {
    const double a = alphas[d];
    if (!(a >= 0.0 && a <= 1.0)) throw ContractError("halting probability " + std::to_string(a) + " outside [0,1]");
    dist.survival[d] = remaining;
    dist.q[d] = remaining * a;
    remaining *= (1.0 - a);
  }
  dist.survival[depth - 1] = remaining;
  dist.q[depth - 1] = remaining;
  dist.cdf = running_sum(dist.q);
  return dist;
}

double ExitDepthDistribution::expected_depth() const {
  double e = 0.0;
  for (std::size_t d = 0; d < q.size(); ++d) e += static_cast<double>(d + 1) * q[d];
  return e;
}

double ExitDepthDistribution::entropy() const {
  double h = 0.0;
  for (double p : q)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

void ExitDepthDistribution::validate(double tol) const {
  double total = 0.0;
  for (double p : q) {
    if (!(p >= 0.0)) throw NumericError("exit-depth probability is negative or NaN");
    total += p;
  }
  if (std::abs(total - 1.0) > tol) throw NumericError("exit-depth distribution sums to " + std::to_string(total));
  for (std::size_t d = 1; d < cdf.size(); ++d)
    if (cdf[d] < cdf[d - 1]) throw NumericError("exit-depth CDF decreases");
}

std::size_t inverse_cdf_sample(std::span<const double> cdf, double u) {
  if (cdf.empty()) throw ContractError("inverse_cdf_sample: empty distribution");
  for (std::size_t d = 0; d < cdf.size(); ++d)
    if (cdf[d] >= u) return d + 1;
  return cdf.size();
}

std::size_t modal_depth(std::span<const double> q) {
  if (q.empty()) throw ContractError("modal_depth: empty distribution");
  return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin()) + 1;
}

GumbelSample gumbel_st_sample(std::span<const double> logits, double tau, Rng& rng, bool zero_noise) {
  if (!(tau > 0.0)) throw ContractError("Gumbel temperature must be positive");
  if (logits.empty()) throw ContractError("gumbel_st_sample: no logits");
  GumbelSample s;
  const std::size_t n = logits.size();
  s.noise.resize(n);
  s.soft.resize(n);
  for (std::size_t d = 0; d < n; ++d) s.noise[d] = zero_noise ? 0.0 : rng.gumbel();
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t d = 0; d < n; ++d) {
    s.soft[d] = (logits[d] + s.noise[d]) / tau;
    if (s.soft[d] > best) {
      best = s.soft[d];
      s.depth = d + 1;
    }
  }
  double z = 0.0;
  for (auto& v : s.soft) z += (v = std::exp(v - best));
  for (auto& v : s.soft) v /= z;
  return s;
}

std::string DepthRule::name() const {
  switch (kind) {
    case Kind::modal: return "modal";
    case Kind::median: return "median";
    case Kind::threshold: return "threshold:" + std::to_string(threshold);
  }
  return "?";
}

DepthRule DepthRule::parse(const std::string& text) {
  if (text == "modal" || text == "mode") return modal();
  if (text == "median") return median();
  const std::string prefix = "threshold:";
  if (text.rfind(prefix, 0) == 0) {
    std::size_t used = 0;
    double c = 0.0;
    try {
      c = std::stod(text.substr(prefix.size()), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || !(c > 0.0 && c <= 1.0)) throw ContractError("bad threshold in depth rule '" + text + "'");
    return at_threshold(c);
  }
  throw ContractError("unknown depth rule '" + text + "' (expected modal, median or threshold:<c>)");
}

bool OnlineHalting::step(double alpha) {
  if (steps_ + 1 >= depth_) throw ContractError("OnlineHalting: no decision exists at the last depth");
  ++steps_;
  cdf_ += remaining_ * alpha;
  remaining_ *= (1.0 - alpha);
  if (!halted_ && cdf_ >= u_) {
    halted_ = true;
    exit_ = steps_;
    return true;
  }
  return false;
}

}  // namespace anira
