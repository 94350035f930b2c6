// SPDX-License-Identifier: Apache-2.0
//
// Straightforward serial versions of the kernels in kernels.hpp. They are
// kept as the correctness reference for tests and as the baseline in the
// kernel benchmark; nothing on the training or decoding path calls them.
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace anira::kernels::reference {

template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = accumulate ? c[i * n + j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = accumulate ? c[i * n + j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = accumulate ? c[i * n + j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

template <typename Real>
void rms_norm_forward(const Real* x, const Real* scale, Real* y, std::size_t rows, std::size_t h, Real eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    Real ms = 0;
    for (std::size_t j = 0; j < h; ++j) ms += x[r * h + j] * x[r * h + j];
    const Real inv = Real(1) / std::sqrt(ms / static_cast<Real>(h) + eps);
    for (std::size_t j = 0; j < h; ++j) y[r * h + j] = x[r * h + j] * inv * scale[j];
  }
}

/// Causal attention, one (sequence, head) pair at a time, with explicit
/// score matrices. Same layout contract as kernels::attention_forward.
template <typename Real>
void attention_forward(const Real* q, const Real* k, const Real* v, Real* out, std::size_t batch,
                       std::size_t seq, std::size_t heads, std::size_t head_dim) {
  const std::size_t width = heads * head_dim;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(head_dim));
  std::vector<Real> w(seq);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < seq; ++t) {
        const std::size_t row = (b * seq + t) * width + h * head_dim;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j <= t; ++j) {
          const std::size_t col = (b * seq + j) * width + h * head_dim;
          Real s = 0;
          for (std::size_t e = 0; e < head_dim; ++e) s += q[row + e] * k[col + e];
          w[j] = s * scale;
          if (w[j] > mx) mx = w[j];
        }
        Real z = 0;
        for (std::size_t j = 0; j <= t; ++j) z += (w[j] = std::exp(w[j] - mx));
        for (std::size_t e = 0; e < head_dim; ++e) {
          Real acc = 0;
          for (std::size_t j = 0; j <= t; ++j) acc += w[j] / z * v[(b * seq + j) * width + h * head_dim + e];
          out[row + e] = acc;
        }
      }
}

}  // namespace anira::kernels::reference
