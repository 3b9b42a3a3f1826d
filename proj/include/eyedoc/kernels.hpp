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

// Dense numeric kernels used by the autodiff ops.
//
// Two implementations live side by side: `serial` is the plain reference
// and `omp` splits the outer loop across OpenMP threads. Both accumulate
// every output element in the same order, so their results are bitwise
// identical; the unqualified entry points dispatch to one or the other
// depending on `set_parallel`.

#pragma once

#include <cstddef>

namespace eyedoc::kernels {

/// Geometry of one fused attention call. Queries attend to `prefix_len`
/// prefix rows (always visible) followed by `keys` sequence rows.
struct AttentionShape {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::size_t prefix_len = 0;
  std::size_t model_dim = 0;
  std::size_t heads = 1;
  bool causal = true;
  /// Absolute position of query 0 among the keys; query i sees sequence
  /// keys j <= i + query_offset when causal (incremental decoding).
  std::size_t query_offset = 0;

  std::size_t head_dim() const { return model_dim / heads; }
  std::size_t row_width() const { return prefix_len + keys; }
};

/// Pointers for one attention call. `key_valid` may be null (all keys
/// valid); `prefix_keys`/`prefix_values` may be null when prefix_len == 0.
/// `probs` receives heads x queries x (prefix_len + keys) weights.
struct AttentionArgs {
  const double* q = nullptr;
  const double* k = nullptr;
  const double* v = nullptr;
  const double* prefix_keys = nullptr;
  const double* prefix_values = nullptr;
  const unsigned char* key_valid = nullptr;
  double* out = nullptr;
  double* probs = nullptr;
};

/// Gradient buffers for attention. Null buffers are skipped. All non-null
/// buffers are accumulated into.
struct AttentionGrads {
  const double* d_out = nullptr;
  double* dq = nullptr;
  double* dk = nullptr;
  double* dv = nullptr;
  double* d_prefix_keys = nullptr;
  double* d_prefix_values = nullptr;
};

#define EYEDOC_KERNEL_DECLS                                                 \
  /* C[m,n] (+)= A[m,k] * B[k,n] */                                         \
  void matmul_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, \
                 const double* b, double* c, bool accumulate);              \
  /* C[m,n] (+)= A[m,k] * B[n,k]^T */                                       \
  void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, \
                 const double* b, double* c, bool accumulate);              \
  /* C[m,n] (+)= A[k,m]^T * B[k,n] */                                       \
  void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, \
                 const double* b, double* c, bool accumulate);              \
  void softmax_rows(std::size_t rows, std::size_t cols, const double* x,    \
                    double* y);                                             \
  void attention_forward(const AttentionShape& shape,                       \
                         const AttentionArgs& args);                        \
  void attention_backward(const AttentionShape& shape,                      \
                          const AttentionArgs& args,                        \
                          const AttentionGrads& grads);

namespace serial {
EYEDOC_KERNEL_DECLS
}  // namespace serial

namespace omp {
EYEDOC_KERNEL_DECLS
}  // namespace omp

EYEDOC_KERNEL_DECLS

#undef EYEDOC_KERNEL_DECLS

/// Selects the OpenMP kernels (default when built with OpenMP) or the
/// serial reference for the unqualified entry points.
void set_parallel(bool enabled);
bool parallel_enabled();

/// True when the library was compiled with OpenMP support.
bool openmp_available();

}  // namespace eyedoc::kernels
