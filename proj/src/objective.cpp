// SPDX-License-Identifier: Apache-2.0
#include "anira/objective.hpp"

#include <algorithm>
#include <cmath>

namespace anira {

DepthPrior DepthPrior::exponential(double base, std::size_t depth) {
  if (!(base >= 1.0)) throw ContractError("depth prior base must be >= 1");
  if (depth == 0) throw ContractError("depth prior needs D >= 1");
  DepthPrior prior;
  prior.base = base;
  prior.p.resize(depth);
  double z = 0.0;
  for (std::size_t d = 0; d < depth; ++d) z += (prior.p[d] = std::pow(base, -static_cast<double>(d + 1)));
  for (auto& v : prior.p) v /= z;
  return prior;
}

double DepthPrior::log_normalizer() const {
  double z = 0.0;
  for (std::size_t d = 0; d < p.size(); ++d) z += std::pow(base, -static_cast<double>(d + 1));
  return std::log(z);
}

double kl_divergence(std::span<const double> q, std::span<const double> p, double eps) {
  if (q.size() != p.size()) throw DimensionError("kl_divergence: length mismatch");
  double kl = 0.0;
  for (std::size_t d = 0; d < q.size(); ++d) kl += q[d] * (std::log(std::max(q[d], eps)) - std::log(p[d]));
  return kl;
}

template <typename Real>
Loss<Real> compute_loss(Tape<Real>& tape, const ForwardTrace<Real>& trace, const Batch& batch, const DepthPrior& prior,
                        double gamma) {
  (void)tape;
  Loss<Real> loss;
  loss.cross_entropy = ops::cross_entropy(trace.logits, std::span<const int>(batch.targets),
                                          std::span<const std::uint8_t>(batch.answer_mask));
  loss.regularizer = ops::kl_to_prior(trace.exit_probs, std::span<const double>(prior.p),
                                      std::span<const std::uint8_t>(batch.token_mask));
  loss.total = gamma == 0.0 ? loss.cross_entropy
                            : ops::add(loss.cross_entropy, ops::scale(loss.regularizer, static_cast<Real>(gamma)));

  LossReport& r = loss.report;
  r.gamma = gamma;
  r.cross_entropy = static_cast<double>(loss.cross_entropy.value()[0]);
  r.regularizer = static_cast<double>(loss.regularizer.value()[0]);
  r.total = static_cast<double>(loss.total.value()[0]);
  const auto& q = trace.exit_probs.value();
  const std::size_t depth = q.cols();
  std::size_t count = 0;
  for (std::size_t row = 0; row < batch.rows(); ++row) {
    if (!batch.token_mask[row]) continue;
    ++count;
    for (std::size_t d = 0; d < depth; ++d) {
      const double v = q.at(row, d);
      r.mean_expected_depth += static_cast<double>(d + 1) * v;
      if (v > 0.0) r.mean_entropy -= v * std::log(v);
    }
  }
  if (count) {
    r.mean_expected_depth /= static_cast<double>(count);
    r.mean_entropy /= static_cast<double>(count);
  }
  if (!std::isfinite(r.total)) throw NumericError("loss is not finite");
  return loss;
}

double lr_schedule(std::size_t step, std::size_t warmup, double base_lr) {
  if (warmup == 0 || step >= warmup) return base_lr;
  return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
}

template <typename Real>
AdamW<Real>::AdamW(std::vector<Parameter<Real>*> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {}

template <typename Real>
void AdamW<Real>::ensure_state() {
  if (m_.size() == params_.size()) return;
  m_.clear();
  v_.clear();
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename Real>
std::vector<Tensor<Real>>& AdamW<Real>::first_moments() {
  ensure_state();
  return m_;
}

template <typename Real>
std::vector<Tensor<Real>>& AdamW<Real>::second_moments() {
  ensure_state();
  return v_;
}

template <typename Real>
void AdamW<Real>::step(double lr) {
  ensure_state();
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i]->value.storage();
    const auto& g = params_[i]->grad.storage();
    auto& m = m_[i].storage();
    auto& v = v_[i].storage();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double update = (mj / c1) / (std::sqrt(vj / c2) + config_.eps);
      w[j] = static_cast<Real>(static_cast<double>(w[j]) * decay - lr * update);
    }
  }
}

template <typename Real>
double clip_grad_norm(const std::vector<Parameter<Real>*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (Real g : p->grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (max_norm > 0.0 && norm > max_norm) {
    const Real s = static_cast<Real>(max_norm / norm);
    for (auto* p : params)
      for (auto& g : p->grad.storage()) g *= s;
  }
  return norm;
}

template Loss<float> compute_loss(Tape<float>&, const ForwardTrace<float>&, const Batch&, const DepthPrior&, double);
template Loss<double> compute_loss(Tape<double>&, const ForwardTrace<double>&, const Batch&, const DepthPrior&, double);
template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(const std::vector<Parameter<float>*>&, double);
template double clip_grad_norm(const std::vector<Parameter<double>*>&, double);

}  // namespace anira
