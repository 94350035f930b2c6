// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "anira/autodiff.hpp"
#include "anira/model.hpp"

namespace anira {

/// p(d) proportional to b^-d on 1..D.
struct DepthPrior {
  double base = 1.0;
  std::vector<double> p;

  static DepthPrior exponential(double base, std::size_t depth);
  /// log sum_d b^-d, the normaliser appearing in the KL decomposition.
  double log_normalizer() const;
};

/// KL(q || p) with logs clamped at eps.
double kl_divergence(std::span<const double> q, std::span<const double> p, double eps = 1e-12);

struct LossReport {
  double total = 0.0;
  double cross_entropy = 0.0;
  double regularizer = 0.0;
  double gamma = 0.0;
  double mean_expected_depth = 0.0;  // over non-pad rows
  double mean_entropy = 0.0;
};

template <typename Real>
struct Loss {
  Var<Real> total;
  Var<Real> cross_entropy;
  Var<Real> regularizer;
  LossReport report;
};

/// L = L_CE + gamma * L_C. With gamma == 0 the total is the cross-entropy
/// node itself and L_C is only reported.
template <typename Real>
Loss<Real> compute_loss(Tape<Real>& tape, const ForwardTrace<Real>& trace, const Batch& batch, const DepthPrior& prior,
                        double gamma);

/// Linear warmup to base_lr (base_lr / warmup at step 1), then constant.
double lr_schedule(std::size_t step, std::size_t warmup, double base_lr);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay. Moments are created on the first step.
template <typename Real>
class AdamW {
 public:
  AdamW(std::vector<Parameter<Real>*> params, AdamWConfig config);

  void step(double lr);
  std::size_t steps() const { return step_; }
  void set_steps(std::size_t s) { step_ = s; }
  const AdamWConfig& config() const { return config_; }

  /// Moment buffers, allocated on demand; index matches the parameter list.
  std::vector<Tensor<Real>>& first_moments();
  std::vector<Tensor<Real>>& second_moments();

 private:
  void ensure_state();

  std::vector<Parameter<Real>*> params_;
  AdamWConfig config_;
  std::vector<Tensor<Real>> m_, v_;
  std::size_t step_ = 0;
};

/// Global L2 norm of all gradients; rescales them to max_norm when above it
/// (max_norm <= 0 disables clipping). Returns the norm before clipping.
template <typename Real>
double clip_grad_norm(const std::vector<Parameter<Real>*>& params, double max_norm);

}  // namespace anira
