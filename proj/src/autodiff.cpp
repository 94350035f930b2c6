// SPDX-License-Identifier: Apache-2.0
#include "anira/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace anira {

template <typename Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::input(Tensor<Real> value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr, {}});
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::parameter(Parameter<Real>& param) {
  if (auto it = param_ids_.find(&param); it != param_ids_.end()) return Var<Real>(this, it->second);
  nodes_.push_back(Node{param.value, {}, grad_enabled_, grad_enabled_ ? &param : nullptr, {}});
  param_ids_.emplace(&param, nodes_.size() - 1);
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::record(Tensor<Real> value, std::initializer_list<Var<Real>> parents, Backward backward) {
  return record(std::move(value), std::vector<Var<Real>>(parents), std::move(backward));
}

template <typename Real>
Var<Real> Tape<Real>::record(Tensor<Real> value, const std::vector<Var<Real>>& parents, Backward backward) {
  if (consumed_) throw ContractError("cannot record on a tape that has already been consumed");
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape() != this) throw ContractError("op inputs belong to a different tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backward) : Backward{}});
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Tensor<Real>& Tape<Real>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && n.value.size() > 0) n.grad = Tensor<Real>(n.value.shape());
  return n.grad;
}

template <typename Real>
void Tape<Real>::backward(const Var<Real>& loss) {
  if (consumed_) throw ContractError("gradient tape already consumed");
  if (loss.tape() != this) throw ContractError("loss does not belong to this tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad(loss.id())[0] = Real(1);
  for (std::size_t id = nodes_.size(); id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      auto& dst = n.param->grad.storage();
      const auto& src = n.grad.storage();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

template <typename Real>
Tensor<Real> Tape<Real>::gradient(const Var<Real>& v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.empty() ? Tensor<Real>(n.value.shape()) : n.grad;
}

namespace ops {
namespace {

template <typename Real>
void require_same_shape(const Var<Real>& a, const Var<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename Real>
void require_finite(const Tensor<Real>& t, const char* op) {
  for (Real v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
}

template <typename Real>
void accumulate(Tensor<Real>& dst, const Tensor<Real>& src, Real s = Real(1)) {
  kernels::axpy(s, src.ptr(), dst.ptr(), dst.size());
}

}  // namespace

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  Tensor<Real> out({m, n});
  kernels::gemm_nn(av.ptr(), bv.ptr(), out.ptr(), m, k, n, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) kernels::gemm_nt(g.ptr(), t.value(ib).ptr(), t.grad(ia).ptr(), m, n, k, true);
    if (t.requires_grad(ib)) kernels::gemm_tn(t.value(ia).ptr(), g.ptr(), t.grad(ib).ptr(), k, m, n, true);
  });
}

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  require_same_shape(a, b, "add");
  Tensor<Real> out = a.value();
  accumulate(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad(ib), g);
  });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  require_same_shape(a, b, "sub");
  Tensor<Real> out = a.value();
  accumulate(out, b.value(), Real(-1));
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad(ib), g, Real(-1));
  });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  require_same_shape(a, b, "mul");
  Tensor<Real> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      const auto& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      const auto& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real s) {
  Tensor<Real> out = a.value();
  for (auto& v : out.storage()) v *= s;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, s](Tape<Real>& t, std::size_t self) {
    accumulate(t.grad(ia), t.grad(self), s);
  });
}

template <typename Real>
Var<Real> add_bias(const Var<Real>& x, const Var<Real>& bias) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (bias.value().size() != cols) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(x.shape()));
  }
  Tensor<Real> out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    kernels::axpy(Real(1), bias.value().ptr(), out.ptr() + r * cols, cols);
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape()->record(std::move(out), {x, bias}, [ix, ib, rows, cols](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ix)) accumulate(t.grad(ix), g);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t r = 0; r < rows; ++r) kernels::axpy(Real(1), g.ptr() + r * cols, gb.ptr(), cols);
    }
  });
}

template <typename Real>
Var<Real> silu(const Var<Real>& x) {
  Tensor<Real> out = x.value();
  for (auto& v : out.storage()) v = v / (Real(1) + std::exp(-v));
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(ix);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real s = Real(1) / (Real(1) + std::exp(-xv[i]));
      gx[i] += g[i] * s * (Real(1) + xv[i] * (Real(1) - s));
    }
  });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& x) {
  Tensor<Real> out = x.value();
  for (auto& v : out.storage()) v = Real(1) / (Real(1) + std::exp(-v));
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (Real(1) - y[i]);
  });
}

template <typename Real>
Var<Real> rms_norm(const Var<Real>& x, const Var<Real>& scale, Real eps) {
  const std::size_t rows = x.rows(), h = x.cols();
  if (h == 0 || scale.value().size() != h) {
    throw DimensionError("rms_norm: scale " + shape_string(scale.shape()) + " vs input " + shape_string(x.shape()));
  }
  Tensor<Real> out(x.shape());
  auto inv = std::make_shared<std::vector<Real>>(rows);
  kernels::rms_norm_forward(x.value().ptr(), scale.value().ptr(), out.ptr(), inv->data(), rows, h, eps);
  const std::size_t ix = x.id(), is = scale.id();
  return x.tape()->record(std::move(out), {x, scale}, [ix, is, inv, rows, h](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Tensor<Real> dx(t.value(ix).shape());
    Tensor<Real> dscale(t.value(is).shape());
    kernels::rms_norm_backward(t.value(ix).ptr(), t.value(is).ptr(), inv->data(), g.ptr(), dx.ptr(), dscale.ptr(),
                               rows, h);
    if (t.requires_grad(ix)) accumulate(t.grad(ix), dx);
    if (t.requires_grad(is)) accumulate(t.grad(is), dscale);
  });
}

template <typename Real>
Var<Real> embedding(const Var<Real>& table, std::span<const int> ids) {
  const std::size_t vocab = table.rows(), h = table.cols();
  Tensor<Real> out({ids.size(), h});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw ContractError("embedding: token id " + std::to_string(ids[r]) + " out of vocabulary of size " +
                          std::to_string(vocab));
    }
    std::copy_n(table.value().ptr() + ids[r] * h, h, out.ptr() + r * h);
  }
  const std::size_t it = table.id();
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape()->record(std::move(out), {table}, [it, saved, h](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gt = t.grad(it);
    for (std::size_t r = 0; r < saved.size(); ++r) kernels::axpy(Real(1), g.ptr() + r * h, gt.ptr() + saved[r] * h, h);
  });
}

template <typename Real>
Var<Real> causal_attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v, std::size_t heads,
                           std::size_t batch, std::size_t seq, const kernels::RopeTable<Real>& rope) {
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const std::size_t width = q.cols();
  if (heads == 0 || width % heads != 0) throw DimensionError("causal_attention: width not divisible by heads");
  if (q.rows() != batch * seq) throw DimensionError("causal_attention: rows != batch * seq");
  const std::size_t hd = width / heads;
  if (hd % 2 != 0 || rope.half * 2 != hd) throw DimensionError("causal_attention: rotary table/head size mismatch");
  if (seq * rope.half > rope.cos.size()) throw DimensionError("causal_attention: sequence longer than rotary table");

  auto qr = std::make_shared<Tensor<Real>>(q.value());
  auto kr = std::make_shared<Tensor<Real>>(k.value());
  for (std::size_t r = 0; r < batch * seq; ++r)
    for (std::size_t h = 0; h < heads; ++h) {
      kernels::rope_rotate(qr->ptr() + r * width + h * hd, rope, r % seq, false);
      kernels::rope_rotate(kr->ptr() + r * width + h * hd, rope, r % seq, false);
    }
  auto probs = std::make_shared<std::vector<Real>>(batch * heads * seq * seq);
  Tensor<Real> out(q.shape());
  kernels::attention_forward(qr->ptr(), kr->ptr(), v.value().ptr(), out.ptr(), probs->data(), batch, seq, heads, hd);

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  const kernels::RopeTable<Real>* table = &rope;
  return q.tape()->record(
      std::move(out), {q, k, v},
      [=](Tape<Real>& t, std::size_t self) {
        const auto& g = t.grad(self);
        Tensor<Real> dq(qr->shape()), dk(kr->shape()), dv(qr->shape());
        kernels::attention_backward(qr->ptr(), kr->ptr(), t.value(iv).ptr(), probs->data(), g.ptr(), dq.ptr(),
                                    dk.ptr(), dv.ptr(), batch, seq, heads, hd);
        for (std::size_t r = 0; r < batch * seq; ++r)
          for (std::size_t h = 0; h < heads; ++h) {
            kernels::rope_rotate(dq.ptr() + r * width + h * hd, *table, r % seq, true);
            kernels::rope_rotate(dk.ptr() + r * width + h * hd, *table, r % seq, true);
          }
        if (t.requires_grad(iq)) accumulate(t.grad(iq), dq);
        if (t.requires_grad(ik)) accumulate(t.grad(ik), dk);
        if (t.requires_grad(iv)) accumulate(t.grad(iv), dv);
      });
}

template <typename Real>
Var<Real> softmax_rows(const Var<Real>& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("softmax: empty axis");
  require_finite(x.value(), "softmax");
  auto out = std::make_shared<Tensor<Real>>(x.value());
  for (std::size_t r = 0; r < rows; ++r) {
    Real* p = out->ptr() + r * n;
    const Real mx = *std::max_element(p, p + n);
    Real z = 0;
    for (std::size_t j = 0; j < n; ++j) z += (p[j] = std::exp(p[j] - mx));
    for (std::size_t j = 0; j < n; ++j) p[j] /= z;
  }
  const std::size_t ix = x.id();
  return x.tape()->record(*out, {x}, [ix, out, rows, n](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* p = out->ptr() + r * n;
      const Real* gr = g.ptr() + r * n;
      const Real inner = kernels::dot(p, gr, n);
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += p[j] * (gr[j] - inner);
    }
  });
}

template <typename Real>
Var<Real> center_rows(const Var<Real>& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  Tensor<Real> out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    Real mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += out[r * n + j];
    mean /= static_cast<Real>(n);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] -= mean;
  }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, rows, n](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      Real mean = 0;
      for (std::size_t j = 0; j < n; ++j) mean += g[r * n + j];
      mean /= static_cast<Real>(n);
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r * n + j] - mean;
    }
  });
}

template <typename Real>
Var<Real> tail_sum_rows(const Var<Real>& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  Tensor<Real> out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = n - 1; j-- > 0;) out[r * n + j] += out[r * n + j + 1];
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, rows, n](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    // d out[d] / d x[j] = 1 for d <= j: a forward prefix sum of g.
    for (std::size_t r = 0; r < rows; ++r) {
      Real run = 0;
      for (std::size_t j = 0; j < n; ++j) {
        run += g[r * n + j];
        gx[r * n + j] += run;
      }
    }
  });
}

template <typename Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor<Real> out({rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.ptr() + r * widths[k], widths[k], out.ptr() + r * total + offset);
    offset += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts.front().tape()->record(std::move(out), parts, [ids, widths, rows, total](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        auto& gk = t.grad(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          kernels::axpy(Real(1), g.ptr() + r * total + offset, gk.ptr() + r * widths[k], widths[k]);
      }
      offset += widths[k];
    }
  });
}

template <typename Real>
Var<Real> column(const Var<Real>& x, std::size_t col) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (col >= n) throw DimensionError("column: index " + std::to_string(col) + " outside " + shape_string(x.shape()));
  Tensor<Real> out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) out[r] = x.value()[r * n + col];
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, rows, n, col](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) gx[r * n + col] += g[r];
  });
}

template <typename Real>
Var<Real> sum(const Var<Real>& x) {
  Real s = 0;
  for (Real v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.tape()->record(Tensor<Real>({1}, std::vector<Real>{s}), {x}, [ix](Tape<Real>& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    for (auto& v : t.grad(ix).storage()) v += g;
  });
}

template <typename Real>
Var<Real> survival(const Var<Real>& alpha) {
  const std::size_t rows = alpha.rows(), steps = alpha.cols(), depth = steps + 1;
  const auto& a = alpha.value();
  Tensor<Real> out({rows, depth});
  for (std::size_t r = 0; r < rows; ++r) {
    out[r * depth] = Real(1);
    for (std::size_t d = 1; d < depth; ++d) out[r * depth + d] = out[r * depth + d - 1] * (Real(1) - a[r * steps + d - 1]);
  }
  const std::size_t ia = alpha.id();
  return alpha.tape()->record(std::move(out), {alpha}, [ia, rows, steps, depth](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& a = t.value(ia);
    auto& ga = t.grad(ia);
    // r^(d) = prod_{j<d}(1 - a_j); dr^(d)/da_j = -prod_{i<d, i!=j}(1 - a_i) for j < d.
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < steps; ++j) {
        Real acc = 0;
        Real prefix = 1;
        for (std::size_t i = 0; i < j; ++i) prefix *= (Real(1) - a[r * steps + i]);
        Real prod = prefix;  // product over i < d, i != j, built incrementally
        for (std::size_t d = j + 1; d < depth; ++d) {
          if (d - 1 > j) prod *= (Real(1) - a[r * steps + d - 1]);
          acc += g[r * depth + d] * prod;
        }
        ga[r * steps + j] -= acc;
      }
    }
  });
}

template <typename Real>
Var<Real> halting_distribution(const Var<Real>& alpha) {
  const std::size_t rows = alpha.rows(), steps = alpha.cols(), depth = steps + 1;
  const auto& a = alpha.value();
  for (Real v : a.data())
    if (!(v >= Real(0) && v <= Real(1))) throw ContractError("halting probability outside [0,1]");
  Tensor<Real> out({rows, depth});
  for (std::size_t r = 0; r < rows; ++r) {
    Real remaining = 1;
    for (std::size_t d = 0; d < steps; ++d) {
      out[r * depth + d] = remaining * a[r * steps + d];
      remaining *= (Real(1) - a[r * steps + d]);
    }
    out[r * depth + steps] = remaining;
  }
  const std::size_t ia = alpha.id();
  return alpha.tape()->record(std::move(out), {alpha}, [ia, rows, steps, depth](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& a = t.value(ia);
    auto& ga = t.grad(ia);
    // q(d) = r^(d-1) a_d for d < D, q(D) = r^(D-1).
    // dq(d)/da_j: d == j -> r^(j-1); d > j -> -q(d) / (1 - a_j) (computed without division).
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* ar = a.ptr() + r * steps;
      const Real* gr = g.ptr() + r * depth;
      for (std::size_t j = 0; j < steps; ++j) {
        Real prefix = 1;
        for (std::size_t i = 0; i < j; ++i) prefix *= (Real(1) - ar[i]);
        Real acc = gr[j] * prefix;
        Real run = prefix;  // prod_{i < d, i != j} (1 - a_i)
        for (std::size_t d = j + 1; d < depth; ++d) {
          if (d - 1 > j) run *= (Real(1) - ar[d - 1]);
          const Real tail = d < steps ? ar[d] : Real(1);
          acc -= gr[d] * run * tail;
        }
        ga[r * steps + j] += acc;
      }
    }
  });
}

template <typename Real>
Var<Real> passthrough(const Var<Real>& prev, const Var<Real>& next, std::span<const std::uint8_t> hard,
                      const std::optional<Var<Real>>& soft, GateMode mode) {
  require_same_shape(prev, next, "passthrough");
  const std::size_t rows = prev.rows(), n = prev.cols();
  if (hard.size() != rows) throw DimensionError("passthrough: gate count does not match rows");
  if (soft && soft->value().size() != rows) throw DimensionError("passthrough: soft gate count does not match rows");
  if (mode == GateMode::soft && !soft) throw ContractError("passthrough: soft mode needs a soft gate");

  Tensor<Real> out(prev.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* src_prev = prev.value().ptr() + r * n;
    const Real* src_next = next.value().ptr() + r * n;
    Real* dst = out.ptr() + r * n;
    if (mode == GateMode::soft) {
      const Real m = soft->value()[r];
      for (std::size_t j = 0; j < n; ++j) dst[j] = m * src_next[j] + (Real(1) - m) * src_prev[j];
    } else {
      // Exact selection keeps frozen rows bit-identical to their exit state.
      std::copy_n(hard[r] ? src_next : src_prev, n, dst);
    }
  }
  std::vector<Var<Real>> parents{prev, next};
  if (soft) parents.push_back(*soft);
  const std::size_t ip = prev.id(), in = next.id();
  const std::optional<std::size_t> is = soft ? std::optional<std::size_t>(soft->id()) : std::nullopt;
  std::vector<std::uint8_t> gates(hard.begin(), hard.end());
  return prev.tape()->record(std::move(out), parents, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const bool want_prev = t.requires_grad(ip), want_next = t.requires_grad(in);
    const bool want_soft = is && t.requires_grad(*is);
    for (std::size_t r = 0; r < rows; ++r) {
      const Real w = mode == GateMode::soft ? t.value(*is)[r] : static_cast<Real>(gates[r]);
      const Real* gr = g.ptr() + r * n;
      if (want_prev) kernels::axpy(Real(1) - w, gr, t.grad(ip).ptr() + r * n, n);
      if (want_next) kernels::axpy(w, gr, t.grad(in).ptr() + r * n, n);
      if (want_soft) {
        const Real* a = t.value(in).ptr() + r * n;
        const Real* b = t.value(ip).ptr() + r * n;
        Real acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += gr[j] * (a[j] - b[j]);
        t.grad(*is)[r] += acc;
      }
    }
  });
}

template <typename Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const std::size_t rows = logits.rows(), vocab = logits.cols();
  if (targets.size() != rows || mask.size() != rows) throw DimensionError("cross_entropy: targets/mask length");
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw ContractError("cross_entropy: empty answer mask");
  auto probs = std::make_shared<Tensor<Real>>(logits.shape());
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) throw ContractError("cross_entropy: bad target");
    const Real* x = logits.value().ptr() + r * vocab;
    Real* p = probs->ptr() + r * vocab;
    const Real mx = *std::max_element(x, x + vocab);
    Real z = 0;
    for (std::size_t j = 0; j < vocab; ++j) z += (p[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < vocab; ++j) p[j] /= z;
    total += -(static_cast<double>(x[targets[r]] - mx) - std::log(static_cast<double>(z)));
  }
  if (!std::isfinite(total)) throw NumericError("cross_entropy: non-finite loss");
  const Real inv = Real(1) / static_cast<Real>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  const std::size_t il = logits.id();
  return logits.tape()->record(Tensor<Real>({1}, std::vector<Real>{static_cast<Real>(total / count)}), {logits},
                               [=](Tape<Real>& t, std::size_t self) {
                                 const Real g = t.grad(self)[0] * inv;
                                 auto& gl = t.grad(il);
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   if (!mk[r]) continue;
                                   const Real* p = probs->ptr() + r * vocab;
                                   Real* dst = gl.ptr() + r * vocab;
                                   for (std::size_t j = 0; j < vocab; ++j) dst[j] += g * p[j];
                                   dst[tg[r]] -= g;
                                 }
                               });
}

template <typename Real>
Var<Real> kl_to_prior(const Var<Real>& q, std::span<const double> prior, std::span<const std::uint8_t> mask,
                      double eps) {
  const std::size_t rows = q.rows(), depth = q.cols();
  if (prior.size() != depth || mask.size() != rows) throw DimensionError("kl_to_prior: prior/mask size");
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw ContractError("kl_to_prior: no tokens");
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    for (std::size_t d = 0; d < depth; ++d) {
      const double v = q.value()[r * depth + d];
      total += v * (std::log(std::max(v, eps)) - std::log(prior[d]));
    }
  }
  std::vector<double> logp(depth);
  for (std::size_t d = 0; d < depth; ++d) logp[d] = std::log(prior[d]);
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  const std::size_t iq = q.id();
  return q.tape()->record(Tensor<Real>({1}, std::vector<Real>{static_cast<Real>(total / count)}), {q},
                          [=](Tape<Real>& t, std::size_t self) {
                            const double g = t.grad(self)[0] / static_cast<double>(count);
                            const auto& qv = t.value(iq);
                            auto& gq = t.grad(iq);
                            for (std::size_t r = 0; r < rows; ++r) {
                              if (!mk[r]) continue;
                              for (std::size_t d = 0; d < depth; ++d) {
                                const double v = qv[r * depth + d];
                                const double dv = v > eps ? std::log(v) + 1.0 - logp[d] : std::log(eps) - logp[d];
                                gq[r * depth + d] += static_cast<Real>(g * dv);
                              }
                            }
                          });
}

#define ANIRA_INSTANTIATE_OPS(R)                                                                                   \
  template Var<R> matmul(const Var<R>&, const Var<R>&);                                                           \
  template Var<R> add(const Var<R>&, const Var<R>&);                                                              \
  template Var<R> sub(const Var<R>&, const Var<R>&);                                                              \
  template Var<R> mul(const Var<R>&, const Var<R>&);                                                              \
  template Var<R> scale(const Var<R>&, R);                                                                        \
  template Var<R> add_bias(const Var<R>&, const Var<R>&);                                                         \
  template Var<R> silu(const Var<R>&);                                                                            \
  template Var<R> sigmoid(const Var<R>&);                                                                         \
  template Var<R> rms_norm(const Var<R>&, const Var<R>&, R);                                                      \
  template Var<R> embedding(const Var<R>&, std::span<const int>);                                                 \
  template Var<R> causal_attention(const Var<R>&, const Var<R>&, const Var<R>&, std::size_t, std::size_t,          \
                                   std::size_t, const kernels::RopeTable<R>&);                                    \
  template Var<R> softmax_rows(const Var<R>&);                                                                    \
  template Var<R> center_rows(const Var<R>&);                                                                     \
  template Var<R> tail_sum_rows(const Var<R>&);                                                                   \
  template Var<R> concat_cols(const std::vector<Var<R>>&);                                                         \
  template Var<R> column(const Var<R>&, std::size_t);                                                             \
  template Var<R> sum(const Var<R>&);                                                                             \
  template Var<R> survival(const Var<R>&);                                                                        \
  template Var<R> halting_distribution(const Var<R>&);                                                            \
  template Var<R> passthrough(const Var<R>&, const Var<R>&, std::span<const std::uint8_t>,                         \
                              const std::optional<Var<R>>&, GateMode);                                            \
  template Var<R> cross_entropy(const Var<R>&, std::span<const int>, std::span<const std::uint8_t>);              \
  template Var<R> kl_to_prior(const Var<R>&, std::span<const double>, std::span<const std::uint8_t>, double);

ANIRA_INSTANTIATE_OPS(float)
ANIRA_INSTANTIATE_OPS(double)

}  // namespace ops

template class Tape<float>;
template class Tape<double>;

}  // namespace anira
