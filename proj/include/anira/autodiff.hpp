// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation. A Tape records every op of one
// forward pass together with a closure that maps the op's output gradient to
// its inputs' gradients; backward() replays the record in reverse once.
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "anira/kernels.hpp"
#include "anira/tensor.hpp"

namespace anira {

/// A trainable tensor with its accumulated gradient. Parameters outlive tapes.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<Real> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(Real(0)); }
};

template <typename Real>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape<Real>* tape() const { return tape_; }
  const Tensor<Real>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Real>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  /// grad_enabled=false binds parameters as constants; nothing is retained
  /// for a backward pass (inference).
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var<Real> constant(Tensor<Real> value);
  /// Free input that receives a gradient (readable through gradient()).
  Var<Real> input(Tensor<Real> value);
  /// Binds a parameter; repeated calls return the same node, so a weight
  /// used at several depths accumulates one gradient.
  Var<Real> parameter(Parameter<Real>& param);

  /// Records an op output. `parents` decide whether the node needs a gradient;
  /// when none do, the backward closure is dropped.
  Var<Real> record(Tensor<Real> value, std::initializer_list<Var<Real>> parents, Backward backward);
  Var<Real> record(Tensor<Real> value, const std::vector<Var<Real>>& parents, Backward backward);

  const Tensor<Real>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var<Real>& v) const { return nodes_[v.id()].requires_grad; }
  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor<Real>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Reverse pass from a scalar loss. Parameter gradients are accumulated into
  /// Parameter::grad. A tape can be consumed exactly once.
  void backward(const Var<Real>& loss);
  /// Gradient of an input node after backward(); zeros when nothing flowed.
  Tensor<Real> gradient(const Var<Real>& v) const;

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool requires_grad = false;
    Parameter<Real>* param = nullptr;
    Backward backward;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<Real>*, std::size_t> param_ids_;
  bool consumed_ = false;
  bool grad_enabled_ = true;
};

/// Mixing mode of the passthrough gate. `straight_through` uses the hard 0/1
/// gate in the forward pass and the soft surrogate in the backward pass;
/// `soft` uses the surrogate in both (gradient-check hook).
enum class GateMode { straight_through, soft };

namespace ops {

template <typename Real> Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> scale(const Var<Real>& a, Real s);
/// x[N x C] + bias[C] broadcast over rows.
template <typename Real> Var<Real> add_bias(const Var<Real>& x, const Var<Real>& bias);
template <typename Real> Var<Real> silu(const Var<Real>& x);
template <typename Real> Var<Real> sigmoid(const Var<Real>& x);
template <typename Real> Var<Real> rms_norm(const Var<Real>& x, const Var<Real>& scale, Real eps = Real(1e-6));
template <typename Real> Var<Real> embedding(const Var<Real>& table, std::span<const int> ids);
/// Multi-head causal attention with rotary encoding of q and k. Inputs are
/// [batch*seq x width]; position of row r is r % seq.
template <typename Real>
Var<Real> causal_attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v, std::size_t heads,
                           std::size_t batch, std::size_t seq, const kernels::RopeTable<Real>& rope);
template <typename Real> Var<Real> softmax_rows(const Var<Real>& x);
template <typename Real> Var<Real> center_rows(const Var<Real>& x);
/// Reverse cumulative sum along each row: out[r][d] = sum_{d' >= d} x[r][d'].
template <typename Real> Var<Real> tail_sum_rows(const Var<Real>& x);
/// Column-wise concatenation of matrices with equal row counts.
template <typename Real> Var<Real> concat_cols(const std::vector<Var<Real>>& parts);
/// Single column as an [N x 1] tensor.
template <typename Real> Var<Real> column(const Var<Real>& x, std::size_t col);
template <typename Real> Var<Real> sum(const Var<Real>& x);
/// Exit-depth distribution from conditional halting probabilities
/// alpha[N x (D-1)] -> q[N x D].
template <typename Real> Var<Real> halting_distribution(const Var<Real>& alpha);
/// Survival mass r^(d) = prod_{d' <= d} (1 - alpha^(d')), d = 0..D-1, as [N x D].
template <typename Real> Var<Real> survival(const Var<Real>& alpha);
/// Row-wise gate between two states; see GateMode. `hard` holds 0/1 per row,
/// `soft` is an optional [N x 1] surrogate that receives the gate gradient.
template <typename Real>
Var<Real> passthrough(const Var<Real>& prev, const Var<Real>& next, std::span<const std::uint8_t> hard,
                      const std::optional<Var<Real>>& soft, GateMode mode);
/// Mean token cross-entropy over rows with weight[r] != 0.
template <typename Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask);
/// Mean over rows with mask[r] != 0 of KL(q_r || prior), logs clamped at eps.
template <typename Real>
Var<Real> kl_to_prior(const Var<Real>& q, std::span<const double> prior, std::span<const std::uint8_t> mask,
                      double eps = 1e-12);

}  // namespace ops

}  // namespace anira
