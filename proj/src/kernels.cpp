// Copyright 2026 The EyeDoc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "eyedoc/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace eyedoc::kernels {

namespace {

#ifdef _OPENMP
std::atomic<bool> g_parallel{true};
#else
std::atomic<bool> g_parallel{false};
#endif

// [model_dim, prefix_len + keys] panel: column j is prefix row j followed
// by sequence rows.
std::vector<double> transposed_rows(const AttentionShape& s, const double* prefix,
                                    const double* rows) {
  const std::size_t width = s.row_width();
  std::vector<double> t(s.model_dim * width);
  for (std::size_t j = 0; j < width; ++j) {
    const double* src = j < s.prefix_len ? prefix + j * s.model_dim
                                         : rows + (j - s.prefix_len) * s.model_dim;
    for (std::size_t d = 0; d < s.model_dim; ++d) t[d * width + j] = src[d];
  }
  return t;
}

// Shared attention body. Every output element is produced by exactly one
// (head, query) iteration, and gradient accumulation into key/value rows
// walks queries in ascending order inside a head, so the parallel variant
// (heads split across threads) matches the serial one bit for bit.
template <bool Parallel>
void attention_forward_impl(const AttentionShape& s, const AttentionArgs& a) {
  const std::size_t dh = s.head_dim();
  const std::size_t width = s.row_width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const long long total = static_cast<long long>(s.heads * s.queries);
  // The parallel variant scores against a transposed key panel so the dot
  // products vectorise across keys; each score still sums over d in order.
  std::vector<double> kt;
  if constexpr (Parallel) kt = transposed_rows(s, a.prefix_keys, a.k);

#pragma omp parallel for schedule(static) if (Parallel)
  for (long long hi = 0; hi < total; ++hi) {
    const std::size_t h = static_cast<std::size_t>(hi) / s.queries;
    const std::size_t i = static_cast<std::size_t>(hi) % s.queries;
    const std::size_t off = h * dh;
    const double* qi = a.q + i * s.model_dim + off;
    double* p = a.probs + (h * s.queries + i) * width;
    double* out = a.out + i * s.model_dim + off;

    double mx = -std::numeric_limits<double>::infinity();
    if constexpr (Parallel) {
      const std::size_t seen =
          s.causal ? std::min(s.keys, i + s.query_offset + 1) : s.keys;
      const std::size_t upto = s.prefix_len + seen;
      for (std::size_t j = 0; j < upto; ++j) p[j] = 0.0;
      for (std::size_t d = 0; d < dh; ++d) {
        const double qd = qi[d];
        const double* row = kt.data() + (off + d) * width;
        for (std::size_t j = 0; j < upto; ++j) p[j] += qd * row[j];
      }
      for (std::size_t j = 0; j < width; ++j) {
        const bool visible =
            j < s.prefix_len ||
            (j < upto && (a.key_valid == nullptr || a.key_valid[j - s.prefix_len] != 0));
        if (!visible) {
          p[j] = -std::numeric_limits<double>::infinity();
          continue;
        }
        p[j] *= scale;
        mx = std::max(mx, p[j]);
      }
    } else {
    for (std::size_t j = 0; j < s.prefix_len; ++j) {
      const double* kj = a.prefix_keys + j * s.model_dim + off;
      double dot = 0.0;
      for (std::size_t d = 0; d < dh; ++d) dot += qi[d] * kj[d];
      p[j] = dot * scale;
      mx = std::max(mx, p[j]);
    }
    for (std::size_t j = 0; j < s.keys; ++j) {
      const bool visible = (!s.causal || j <= i + s.query_offset) &&
                           (a.key_valid == nullptr || a.key_valid[j] != 0);
      double* slot = p + s.prefix_len + j;
      if (!visible) {
        *slot = -std::numeric_limits<double>::infinity();
        continue;
      }
      const double* kj = a.k + j * s.model_dim + off;
      double dot = 0.0;
      for (std::size_t d = 0; d < dh; ++d) dot += qi[d] * kj[d];
      *slot = dot * scale;
      mx = std::max(mx, *slot);
    }
    }
    for (std::size_t d = 0; d < dh; ++d) out[d] = 0.0;
    if (mx == -std::numeric_limits<double>::infinity()) {
      for (std::size_t j = 0; j < width; ++j) p[j] = 0.0;
      continue;
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      p[j] = (p[j] == -std::numeric_limits<double>::infinity())
                 ? 0.0
                 : std::exp(p[j] - mx);
      sum += p[j];
    }
    for (std::size_t j = 0; j < width; ++j) p[j] /= sum;
    for (std::size_t j = 0; j < s.prefix_len; ++j) {
      const double w = p[j];
      if (w == 0.0) continue;
      const double* vj = a.prefix_values + j * s.model_dim + off;
      for (std::size_t d = 0; d < dh; ++d) out[d] += w * vj[d];
    }
    for (std::size_t j = 0; j < s.keys; ++j) {
      const double w = p[s.prefix_len + j];
      if (w == 0.0) continue;
      const double* vj = a.v + j * s.model_dim + off;
      for (std::size_t d = 0; d < dh; ++d) out[d] += w * vj[d];
    }
  }
}

template <bool Parallel>
void attention_backward_impl(const AttentionShape& s, const AttentionArgs& a,
                             const AttentionGrads& g) {
  const std::size_t dh = s.head_dim();
  const std::size_t width = s.row_width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const long long heads = static_cast<long long>(s.heads);
  std::vector<double> vt;
  if constexpr (Parallel) vt = transposed_rows(s, a.prefix_values, a.v);

#pragma omp parallel for schedule(static) if (Parallel)
  for (long long hh = 0; hh < heads; ++hh) {
    const std::size_t h = static_cast<std::size_t>(hh);
    const std::size_t off = h * dh;
    std::vector<double> dp(width);
    for (std::size_t i = 0; i < s.queries; ++i) {
      const double* p = a.probs + (h * s.queries + i) * width;
      const double* go = g.d_out + i * s.model_dim + off;
      const double* qi = a.q + i * s.model_dim + off;
      double weighted = 0.0;
      if constexpr (Parallel) {
        for (std::size_t j = 0; j < width; ++j) dp[j] = 0.0;
        for (std::size_t d = 0; d < dh; ++d) {
          const double gd = go[d];
          const double* row = vt.data() + (off + d) * width;
          for (std::size_t j = 0; j < width; ++j) dp[j] += gd * row[j];
        }
        for (std::size_t j = 0; j < width; ++j) {
          if (p[j] == 0.0) {
            dp[j] = 0.0;
            continue;
          }
          weighted += p[j] * dp[j];
        }
      } else
      for (std::size_t j = 0; j < width; ++j) {
        if (p[j] == 0.0) {
          dp[j] = 0.0;
          continue;
        }
        const double* vj = j < s.prefix_len
                               ? a.prefix_values + j * s.model_dim + off
                               : a.v + (j - s.prefix_len) * s.model_dim + off;
        double dot = 0.0;
        for (std::size_t d = 0; d < dh; ++d) dot += go[d] * vj[d];
        dp[j] = dot;
        weighted += p[j] * dot;
      }
      for (std::size_t j = 0; j < width; ++j) {
        if (p[j] == 0.0) continue;
        const bool is_prefix = j < s.prefix_len;
        const std::size_t row = is_prefix ? j : j - s.prefix_len;
        double* dv = is_prefix ? g.d_prefix_values : g.dv;
        if (dv != nullptr) {
          double* dvj = dv + row * s.model_dim + off;
          for (std::size_t d = 0; d < dh; ++d) dvj[d] += p[j] * go[d];
        }
        const double ds = p[j] * (dp[j] - weighted) * scale;
        const double* kj = is_prefix ? a.prefix_keys + row * s.model_dim + off
                                     : a.k + row * s.model_dim + off;
        if (g.dq != nullptr) {
          double* dqi = g.dq + i * s.model_dim + off;
          for (std::size_t d = 0; d < dh; ++d) dqi[d] += ds * kj[d];
        }
        double* dk = is_prefix ? g.d_prefix_keys : g.dk;
        if (dk != nullptr) {
          double* dkj = dk + row * s.model_dim + off;
          for (std::size_t d = 0; d < dh; ++d) dkj[d] += ds * qi[d];
        }
      }
    }
  }
}

template <bool Parallel>
void softmax_rows_impl(std::size_t rows, std::size_t cols, const double* x,
                       double* y) {
  const long long n = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (Parallel)
  for (long long rr = 0; rr < n; ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference.

namespace serial {

void matmul_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * b[p * n + j];
    }
}

void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x,
                  double* y) {
  softmax_rows_impl<false>(rows, cols, x, y);
}

void attention_forward(const AttentionShape& shape, const AttentionArgs& args) {
  attention_forward_impl<false>(shape, args);
}

void attention_backward(const AttentionShape& shape, const AttentionArgs& args,
                        const AttentionGrads& grads) {
  attention_backward_impl<false>(shape, args, grads);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP. Row blocks of C are split across threads; within a block the
// reduction index runs in ascending order exactly like the reference.

namespace omp {

namespace {

// Register tile: kTileRows rows of C times two vectors of kLanes columns.
// Each C element still accumulates its products in ascending p order, so
// the tile reproduces the serial reference exactly (no FMA contraction).
constexpr std::size_t kLanes = 8;
constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 2 * kLanes;
typedef double Lane __attribute__((vector_size(kLanes * sizeof(double))));

inline Lane load_lane(const double* p) {
  Lane v;
  std::memcpy(&v, p, sizeof(Lane));
  return v;
}

inline void store_lane(double* p, Lane v) { std::memcpy(p, &v, sizeof(Lane)); }

// C[i0:i0+rows, 0:n] += A * B with A(i, p) = a[i * a_row + p * a_col]; B and
// C are row-major with leading dimension ld.
void tile_rows(std::size_t i0, std::size_t rows, std::size_t k, std::size_t n, std::size_t ld,
               const double* a, std::size_t a_row, std::size_t a_col, const double* b, double* c) {
  std::size_t j0 = 0;
  if (rows == kTileRows) {
    for (; j0 + kTileCols <= n; j0 += kTileCols) {
      Lane acc[kTileRows][2];
      for (std::size_t r = 0; r < kTileRows; ++r) {
        acc[r][0] = load_lane(c + (i0 + r) * ld + j0);
        acc[r][1] = load_lane(c + (i0 + r) * ld + j0 + kLanes);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const Lane b0 = load_lane(b + p * ld + j0);
        const Lane b1 = load_lane(b + p * ld + j0 + kLanes);
        for (std::size_t r = 0; r < kTileRows; ++r) {
          const double av = a[(i0 + r) * a_row + p * a_col];
          const Lane bv0 = b0 * av, bv1 = b1 * av;
          acc[r][0] += bv0;
          acc[r][1] += bv1;
        }
      }
      for (std::size_t r = 0; r < kTileRows; ++r) {
        store_lane(c + (i0 + r) * ld + j0, acc[r][0]);
        store_lane(c + (i0 + r) * ld + j0 + kLanes, acc[r][1]);
      }
    }
  }
  if (j0 == n) return;
  for (std::size_t i = i0; i < i0 + rows; ++i) {
    double* ci = c + i * ld;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * a_row + p * a_col];
      const double* bp = b + p * ld;
      for (std::size_t j = j0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void tiled(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t a_row,
           std::size_t a_col, const double* b, double* c) {
  // Column panels keep the touched slice of B cache-resident.
  constexpr std::size_t kPanel = 128;
  const long long blocks = static_cast<long long>((m + kTileRows - 1) / kTileRows);
  for (std::size_t j0 = 0; j0 < n; j0 += kPanel) {
    const std::size_t width = std::min(kPanel, n - j0);
#pragma omp parallel for schedule(static)
    for (long long bb = 0; bb < blocks; ++bb) {
      const std::size_t i0 = static_cast<std::size_t>(bb) * kTileRows;
      tile_rows(i0, std::min(kTileRows, m - i0), k, width, n, a, a_row, a_col, b + j0, c + j0);
    }
  }
}

void nn_blocked(std::size_t m, std::size_t k, std::size_t n, const double* a,
                const double* b, double* c) {
  tiled(m, k, n, a, k, 1, b, c);
}

}  // namespace

void matmul_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  nn_blocked(m, k, n, a, b, c);
}

void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  nn_blocked(m, k, n, a, bt.data(), c);
}

void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  tiled(m, k, n, a, 1, m, b, c);
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x,
                  double* y) {
  softmax_rows_impl<true>(rows, cols, x, y);
}

void attention_forward(const AttentionShape& shape, const AttentionArgs& args) {
  attention_forward_impl<true>(shape, args);
}

void attention_backward(const AttentionShape& shape, const AttentionArgs& args,
                        const AttentionGrads& grads) {
  attention_backward_impl<true>(shape, args, grads);
}

}  // namespace omp

// ---------------------------------------------------------------------------
// Dispatch.

void set_parallel(bool enabled) { g_parallel = enabled && openmp_available(); }
bool parallel_enabled() { return g_parallel; }

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

void matmul_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  if (g_parallel) return omp::matmul_nn(m, k, n, a, b, c, accumulate);
  serial::matmul_nn(m, k, n, a, b, c, accumulate);
}

void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  if (g_parallel) return omp::matmul_nt(m, k, n, a, b, c, accumulate);
  serial::matmul_nt(m, k, n, a, b, c, accumulate);
}

void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  if (g_parallel) return omp::matmul_tn(m, k, n, a, b, c, accumulate);
  serial::matmul_tn(m, k, n, a, b, c, accumulate);
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x,
                  double* y) {
  if (g_parallel) return omp::softmax_rows(rows, cols, x, y);
  serial::softmax_rows(rows, cols, x, y);
}

void attention_forward(const AttentionShape& shape, const AttentionArgs& args) {
  if (g_parallel) return omp::attention_forward(shape, args);
  serial::attention_forward(shape, args);
}

void attention_backward(const AttentionShape& shape, const AttentionArgs& args,
                        const AttentionGrads& grads) {
  if (g_parallel) return omp::attention_backward(shape, args, grads);
  serial::attention_backward(shape, args, grads);
}

}  // namespace eyedoc::kernels
