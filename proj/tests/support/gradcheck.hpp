// SPDX-License-Identifier: Apache-2.0
//
// Central finite differences against tape gradients, in double precision.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "anira/autodiff.hpp"
#include "anira/model.hpp"
#include "anira/rng.hpp"

namespace anira::testing {

using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// ||a - n|| / max(||a|| + ||n||, floor): symmetric, bounded by 1.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-6) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), floor);
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = rng.normal() * scale;
  return t;
}

/// Largest relative error over all inputs of f (each flattened).
inline double check_inputs(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double h = 1e-5) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& x : inputs) vars.push_back(tape.input(x));
  Var<double> loss = f(tape, vars);
  tape.backward(loss);

  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t(false);
    std::vector<Var<double>> v;
    for (const auto& x : xs) v.push_back(t.constant(x));
    return f(t, v).value()[0];
  };

  double worst = 0.0;
  std::vector<Tensor<double>> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> analytic = tape.gradient(vars[i]);
    std::vector<double> a(analytic.data().begin(), analytic.data().end()), n(a.size());
    for (std::size_t e = 0; e < a.size(); ++e) {
      const double keep = work[i].storage()[e];
      work[i].storage()[e] = keep + h;
      const double up = evaluate(work);
      work[i].storage()[e] = keep - h;
      const double down = evaluate(work);
      work[i].storage()[e] = keep;
      n[e] = (up - down) / (2 * h);
    }
    worst = std::max(worst, relative_error(a, n));
  }
  return worst;
}

/// Same check on model parameters; `loss` rebuilds the forward pass on a
/// fresh tape. At most `per_tensor` entries of each parameter are probed.
inline double check_parameters(Model<double>& model, const std::function<Var<double>(Tape<double>&)>& loss,
                               Rng& rng, std::size_t per_tensor = 6, double h = 1e-5) {
  model.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  std::vector<double> a, n;
  for (auto* p : model.parameters()) {
    const std::size_t size = p->value.size();
    for (std::size_t probe = 0; probe < std::min(per_tensor, size); ++probe) {
      const auto e = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(size) - 1));
      const double keep = p->value.storage()[e];
      p->value.storage()[e] = keep + h;
      double up, down;
      {
        Tape<double> t(false);
        up = loss(t).value()[0];
      }
      p->value.storage()[e] = keep - h;
      {
        Tape<double> t(false);
        down = loss(t).value()[0];
      }
      p->value.storage()[e] = keep;
      a.push_back(p->grad.storage()[e]);
      n.push_back((up - down) / (2 * h));
    }
  }
  return relative_error(a, n);
}

}  // namespace anira::testing
