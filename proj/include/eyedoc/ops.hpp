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

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "eyedoc/tensor.hpp"

namespace eyedoc::ad {

/// Target value skipped by the cross-entropy ops.
inline constexpr std::int64_t kIgnoreIndex = -1;

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor tanh(const Tensor& a);
Tensor gelu(const Tensor& a);

/// x[m,n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Linear algebra on rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Softmax along `axis`; each slice sums to one.
Tensor softmax(const Tensor& x, std::size_t axis);

enum class Reduction { kMean, kSum };

/// Cross-entropy of logits[batch, vocab] against class targets.
/// Entries equal to kIgnoreIndex are skipped; kMean divides by the number
/// of scored rows.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                     Reduction reduction = Reduction::kMean);

/// Mean cross-entropy over every row (no ignored entries allowed).
Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::int64_t> targets);

/// Row-wise layer normalisation of x[m,n] with gain/shift of length n.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Gathers rows of table[vocab, dim].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);

struct AttentionOptions {
  std::size_t heads = 1;
  bool causal = true;
  /// Position of the first query among the keys (cached decoding); causal
  /// attention then needs keys = queries + query_offset.
  std::size_t query_offset = 0;
  /// One flag per key row; empty means every key is valid.
  std::vector<unsigned char> key_valid;
};

/// Multi-head scaled dot-product attention over q,k,v[len, model_dim].
/// Optional prefix keys/values [prefix_len, model_dim] are prepended and
/// visible to every query regardless of the causal mask.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::optional<Tensor>& prefix_keys,
                 const std::optional<Tensor>& prefix_values,
                 const AttentionOptions& options);

/// Same as `attention` but also returns the weight rows
/// [heads, queries, prefix_len + keys] for inspection.
Tensor attention_with_weights(const Tensor& q, const Tensor& k, const Tensor& v,
                              const std::optional<Tensor>& prefix_keys,
                              const std::optional<Tensor>& prefix_values,
                              const AttentionOptions& options,
                              std::vector<double>* weights);

}  // namespace eyedoc::ad
