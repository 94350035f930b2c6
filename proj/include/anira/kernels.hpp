// SPDX-License-Identifier: Apache-2.0
//
// Compute kernels used by the autodiff ops and the cached decoder.
//
// All matrices are dense row-major. Parallel loops only ever split the
// outermost index across threads and every output element is produced by
// exactly one thread in a fixed order, so results are bitwise independent of
// the thread count. Serial reference versions live in kernels_reference.hpp.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace anira::kernels {

/// Work (in multiply-adds) below which a kernel stays on the calling thread.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 16;

/// y[0:n] += s * x[0:n]
template <typename Real>
inline void axpy(Real s, const Real* __restrict x, Real* __restrict y, std::size_t n) {
#pragma omp simd
  for (std::size_t j = 0; j < n; ++j) y[j] += s * x[j];
}

template <typename Real>
inline Real dot(const Real* __restrict x, const Real* __restrict y, std::size_t n) {
  Real acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t j = 0; j < n; ++j) acc += x[j] * y[j];
  return acc;
}

namespace detail {

/// Rows of A are read through strides so one kernel serves a and a^T:
/// A(i, p) = a[i * row_stride + p * col_stride].
template <typename Real>
struct StridedA {
  const Real* a;
  std::size_t row_stride, col_stride;
  Real operator()(std::size_t i, std::size_t p) const { return a[i * row_stride + p * col_stride]; }
};

/// Register tile of RB rows by JB columns; the accumulators stay in vector
/// registers across the whole k loop.
template <typename Real, std::size_t RB, std::size_t JB>
inline void gemm_tile(StridedA<Real> A, const Real* b, Real* c, std::size_t i0, std::size_t j0, std::size_t k,
                      std::size_t n, bool accumulate) {
  Real acc[RB][JB];
  for (std::size_t r = 0; r < RB; ++r)
#pragma omp simd
    for (std::size_t j = 0; j < JB; ++j) acc[r][j] = accumulate ? c[(i0 + r) * n + j0 + j] : Real(0);
  for (std::size_t p = 0; p < k; ++p) {
    const Real* __restrict br = b + p * n + j0;
    for (std::size_t r = 0; r < RB; ++r) {
      const Real s = A(i0 + r, p);
#pragma omp simd
      for (std::size_t j = 0; j < JB; ++j) acc[r][j] += s * br[j];
    }
  }
  for (std::size_t r = 0; r < RB; ++r)
#pragma omp simd
    for (std::size_t j = 0; j < JB; ++j) c[(i0 + r) * n + j0 + j] = acc[r][j];
}

/// Columns [j0, n) of one row, for the ragged right edge.
template <typename Real>
inline void gemm_row_tail(StridedA<Real> A, const Real* b, Real* c, std::size_t i, std::size_t j0, std::size_t k,
                          std::size_t n, bool accumulate) {
  Real* cr = c + i * n;
  if (!accumulate) std::fill(cr + j0, cr + n, Real(0));
  for (std::size_t p = 0; p < k; ++p) {
    const Real s = A(i, p);
    const Real* __restrict br = b + p * n;
#pragma omp simd
    for (std::size_t j = j0; j < n; ++j) cr[j] += s * br[j];
  }
}

template <typename Real>
void gemm_strided(StridedA<Real> A, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
                  bool accumulate) {
  constexpr std::size_t RB = 4;
  constexpr std::size_t JB = 256 / sizeof(Real);
  const std::size_t full_cols = n / JB * JB;
  const auto blocks = static_cast<std::ptrdiff_t>((m + RB - 1) / RB);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (std::ptrdiff_t bi = 0; bi < blocks; ++bi) {
    const std::size_t i0 = static_cast<std::size_t>(bi) * RB;
    const std::size_t rows = std::min(RB, m - i0);
    for (std::size_t j0 = 0; j0 < full_cols; j0 += JB) {
      if (rows == RB) {
        gemm_tile<Real, RB, JB>(A, b, c, i0, j0, k, n, accumulate);
      } else {
        for (std::size_t r = 0; r < rows; ++r) gemm_tile<Real, 1, JB>(A, b, c, i0 + r, j0, k, n, accumulate);
      }
    }
    if (full_cols < n)
      for (std::size_t r = 0; r < rows; ++r) gemm_row_tail(A, b, c, i0 + r, full_cols, k, n, accumulate);
  }
}

}  // namespace detail

/// c[m x n] (+)= a[m x k] * b[k x n]
template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  detail::gemm_strided<Real>({a, k, 1}, b, c, m, k, n, accumulate);
}

/// c[m x n] (+)= a[k x m]^T * b[k x n]
template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  detail::gemm_strided<Real>({a, 1, m}, b, c, m, k, n, accumulate);
}

template <typename Real>
void transpose(const Real* a, Real* out, std::size_t rows, std::size_t cols) {
  constexpr std::size_t tile = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += tile)
    for (std::size_t c0 = 0; c0 < cols; c0 += tile)
      for (std::size_t r = r0; r < std::min(rows, r0 + tile); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + tile); ++c) out[c * rows + r] = a[r * cols + c];
}

/// c[m x n] (+)= a[m x k] * b[n x k]^T
template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const Real v = dot(a + i * k, b, k);
      c[i] = accumulate ? c[i] + v : v;
    }
    return;
  }
  std::vector<Real> bt(k * n);
  transpose(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

/// Root-mean-square normalisation of each row with an elementwise scale.
/// Stores the per-row reciprocal RMS in inv_rms for the backward pass.
template <typename Real>
void rms_norm_forward(const Real* x, const Real* scale, Real* y, Real* inv_rms, std::size_t rows,
                      std::size_t h, Real eps) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * h > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const Real* xr = x + r * h;
    const Real ms = dot(xr, xr, h) / static_cast<Real>(h);
    const Real inv = Real(1) / std::sqrt(ms + eps);
    inv_rms[r] = inv;
    Real* yr = y + r * h;
#pragma omp simd
    for (std::size_t j = 0; j < h; ++j) yr[j] = xr[j] * inv * scale[j];
  }
}

/// dx is overwritten; dscale is accumulated.
template <typename Real>
void rms_norm_backward(const Real* x, const Real* scale, const Real* inv_rms, const Real* dy, Real* dx,
                       Real* dscale, std::size_t rows, std::size_t h) {
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x + r * h;
    const Real* gr = dy + r * h;
    const Real inv = inv_rms[r];
    Real proj = 0;
    for (std::size_t j = 0; j < h; ++j) {
      const Real xhat = xr[j] * inv;
      dscale[j] += gr[j] * xhat;
      proj += gr[j] * scale[j] * xhat;
    }
    proj /= static_cast<Real>(h);
    Real* dr = dx + r * h;
    for (std::size_t j = 0; j < h; ++j) dr[j] = inv * (gr[j] * scale[j] - xr[j] * inv * proj);
  }
}

/// Rotary position tables for a given head dimension: cos/sin of pos * theta_i
/// for i < head_dim / 2, laid out [position][i].
template <typename Real>
struct RopeTable {
  std::size_t half = 0;
  std::vector<Real> cos, sin;

  RopeTable() = default;
  RopeTable(std::size_t max_positions, std::size_t head_dim, double base = 10000.0) : half(head_dim / 2) {
    cos.resize(max_positions * half);
    sin.resize(max_positions * half);
    for (std::size_t p = 0; p < max_positions; ++p) {
      for (std::size_t i = 0; i < half; ++i) {
        const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        cos[p * half + i] = static_cast<Real>(std::cos(static_cast<double>(p) * theta));
        sin[p * half + i] = static_cast<Real>(std::sin(static_cast<double>(p) * theta));
      }
    }
  }
};

/// Rotates one head vector in place (half-split pairing). inverse=true applies
/// the transposed rotation, which is the backward map.
template <typename Real>
inline void rope_rotate(Real* x, const RopeTable<Real>& table, std::size_t pos, bool inverse) {
  const std::size_t half = table.half;
  const Real* cs = table.cos.data() + pos * half;
  const Real* sn = table.sin.data() + pos * half;
  for (std::size_t i = 0; i < half; ++i) {
    const Real x1 = x[i];
    const Real x2 = x[i + half];
    const Real s = inverse ? -sn[i] : sn[i];
    x[i] = x1 * cs[i] - x2 * s;
    x[i + half] = x2 * cs[i] + x1 * s;
  }
}

/// Softmax attention of one query head over n key/value rows. keys[j] and
/// values[j] point at the start of row j; head_offset selects the head slice.
/// probs receives the n weights. Shared by the batched kernel and the cached
/// decoder so both follow the same arithmetic.
template <typename Real>
inline void attend_row(const Real* qt, const Real* const* keys, const Real* const* values, std::size_t n,
                       std::size_t head_offset, std::size_t head_dim, Real scale, Real* probs, Real* out) {
  Real mx = -std::numeric_limits<Real>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    probs[j] = dot(qt, keys[j] + head_offset, head_dim) * scale;
    mx = std::max(mx, probs[j]);
  }
  Real denom = 0;
  for (std::size_t j = 0; j < n; ++j) {
    probs[j] = std::exp(probs[j] - mx);
    denom += probs[j];
  }
  std::fill_n(out, head_dim, Real(0));
  for (std::size_t j = 0; j < n; ++j) {
    probs[j] /= denom;
    axpy(probs[j], values[j] + head_offset, out, head_dim);
  }
}

/// Causal multi-head attention over `batch` padded sequences of length `seq`.
/// q, k, v, out are [batch*seq x heads*head_dim]; q and k already carry
/// rotary encoding. probs receives [batch][heads][seq][seq] softmax weights.
template <typename Real>
void attention_forward(const Real* q, const Real* k, const Real* v, Real* out, Real* probs, std::size_t batch,
                       std::size_t seq, std::size_t heads, std::size_t head_dim) {
  const std::size_t width = heads * head_dim;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(head_dim));
  const auto jobs = static_cast<std::ptrdiff_t>(batch * heads);
#pragma omp parallel for schedule(static) if (batch * heads * seq * seq * head_dim > kParallelThreshold)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::size_t b = static_cast<std::size_t>(job) / heads;
    const std::size_t h = static_cast<std::size_t>(job) % heads;
    const std::size_t base = b * seq;
    std::vector<const Real*> keys(seq), values(seq);
    for (std::size_t j = 0; j < seq; ++j) {
      keys[j] = k + (base + j) * width;
      values[j] = v + (base + j) * width;
    }
    Real* pb = probs + (b * heads + h) * seq * seq;
    for (std::size_t t = 0; t < seq; ++t) {
      Real* pt = pb + t * seq;
      attend_row(q + (base + t) * width + h * head_dim, keys.data(), values.data(), t + 1, h * head_dim, head_dim,
                 scale, pt, out + (base + t) * width + h * head_dim);
      std::fill(pt + t + 1, pt + seq, Real(0));
    }
  }
}

/// Gradients of attention_forward with respect to q, k, v (accumulated).
template <typename Real>
void attention_backward(const Real* q, const Real* k, const Real* v, const Real* probs, const Real* dout, Real* dq,
                        Real* dk, Real* dv, std::size_t batch, std::size_t seq, std::size_t heads,
                        std::size_t head_dim) {
  const std::size_t width = heads * head_dim;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(head_dim));
  const auto jobs = static_cast<std::ptrdiff_t>(batch * heads);
#pragma omp parallel for schedule(static) if (batch * heads * seq * seq * head_dim > kParallelThreshold)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::size_t b = static_cast<std::size_t>(job) / heads;
    const std::size_t h = static_cast<std::size_t>(job) % heads;
    const std::size_t base = b * seq;
    const Real* pb = probs + (b * heads + h) * seq * seq;
    std::vector<Real> dp(seq);
    for (std::size_t t = 0; t < seq; ++t) {
      const std::size_t row = (base + t) * width + h * head_dim;
      const Real* pt = pb + t * seq;
      const Real* gt = dout + row;
      Real weighted = 0;
      for (std::size_t j = 0; j <= t; ++j) {
        const std::size_t col = (base + j) * width + h * head_dim;
        dp[j] = dot(gt, v + col, head_dim);
        weighted += pt[j] * dp[j];
        axpy(pt[j], gt, dv + col, head_dim);
      }
      for (std::size_t j = 0; j <= t; ++j) {
        const std::size_t col = (base + j) * width + h * head_dim;
        const Real ds = pt[j] * (dp[j] - weighted) * scale;
        axpy(ds, k + col, dq + row, head_dim);
        axpy(ds, q + row, dk + col, head_dim);
      }
    }
  }
}

}  // namespace anira::kernels
