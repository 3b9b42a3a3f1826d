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

#include "eyedoc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "eyedoc/errors.hpp"
#include "eyedoc/kernels.hpp"

namespace eyedoc::ad {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(a.shape()));
  }
}

template <typename Fn, typename Dfn>
Tensor unary(const Tensor& a, const char* op, Fn f, Dfn df) {
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(a.shape(), std::move(out), {a},
                     [a, df](std::span<const double> g, std::span<double* const> gi) {
                       auto x = a.data();
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * df(x[i]);
                     },
                     op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<double* const> gi) {
                       for (double* dst : gi)
                         if (dst)
                           for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                     },
                     "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<double* const> gi) {
                       if (gi[0])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                       if (gi[1])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] -= g[i];
                     },
                     "sub");
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g, std::span<double* const> gi) {
                       auto x = a.data();
                       auto y = b.data();
                       if (gi[0])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * y[i];
                       if (gi[1])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += g[i] * x[i];
                     },
                     "hadamard");
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result(a.shape(), std::move(out), {a},
                     [factor](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * factor;
                     },
                     "scale");
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x) {
        const double u = c * (x + k * x * x * x);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) throw DimensionError("add_bias: bias length does not match columns");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] + bias.data()[j];
  return make_result(x.shape(), std::move(out), {x, bias},
                     [m, n](std::span<const double> g, std::span<double* const> gi) {
                       if (gi[0])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                       if (gi[1])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) gi[1][j] += g[i * n + j];
                     },
                     "add_bias");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::matmul_nn(m, k, n, a.data().data(), b.data().data(), out.data(), false);
  return make_result({m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](std::span<const double> g, std::span<double* const> gi) {
                       if (gi[0]) kernels::matmul_nt(m, n, k, g.data(), b.data().data(), gi[0], true);
                       if (gi[1]) kernels::matmul_tn(k, m, n, a.data().data(), g.data(), gi[1], true);
                     },
                     "matmul");
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return make_result({n, m}, std::move(out), {a},
                     [m, n](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += g[j * m + i];
                     },
                     "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a},
                     [](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                     },
                     "reshape");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d])
        throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(first));
    out_shape[axis] += s[axis];
    widths.push_back(s[axis] * inner);
  }
  const std::size_t row = out_shape[axis] * inner;
  std::vector<double> out(outer * row);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto src = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + o * widths[p], widths[p], out.begin() + o * row + col);
    col += widths[p];
  }
  return make_result(std::move(out_shape), std::move(out), parts,
                     [widths, outer, row](std::span<const double> g, std::span<double* const> gi) {
                       std::size_t col = 0;
                       for (std::size_t p = 0; p < widths.size(); ++p) {
                         if (gi[p])
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < widths[p]; ++j)
                               gi[p][o * widths[p] + j] += g[o * row + col + j];
                         col += widths[p];
                       }
                     },
                     "concat");
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || begin >= end || end > a.dim(0)) {
    throw IndexError("slice_rows: invalid range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") for " + shape_str(a.shape()));
  }
  const std::size_t stride = a.size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<double> out(a.data().begin() + begin * stride, a.data().begin() + end * stride);
  return make_result(std::move(shape), std::move(out), {a},
                     [begin, stride](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][begin * stride + i] += g[i];
                     },
                     "slice_rows");
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  const std::size_t n = a.size();
  return make_result({1}, {total}, {a},
                     [n](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[0];
                     },
                     "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  const std::size_t n = s[axis];
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  std::vector<double> y(x.size());
  if (inner == 1) {
    kernels::softmax_rows(outer, n, x.data().data(), y.data());
  } else {
    auto src = x.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double mx = src[base];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, src[base + j * inner]);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          y[base + j * inner] = std::exp(src[base + j * inner] - mx);
          total += y[base + j * inner];
        }
        for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= total;
      }
  }
  auto saved = std::make_shared<std::vector<double>>(y);
  return make_result(s, std::move(y), {x},
                     [saved, outer, n, inner](std::span<const double> g, std::span<double* const> gi) {
                       const auto& y = *saved;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t in = 0; in < inner; ++in) {
                           const std::size_t base = o * n * inner + in;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < n; ++j)
                             dot += g[base + j * inner] * y[base + j * inner];
                           for (std::size_t j = 0; j < n; ++j) {
                             const std::size_t idx = base + j * inner;
                             gi[0][idx] += y[idx] * (g[idx] - dot);
                           }
                         }
                     },
                     "softmax");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                     Reduction reduction) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  kernels::softmax_rows(rows, vocab, logits.data().data(), probs->data());
  std::vector<std::int64_t> tgt(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] == kIgnoreIndex) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(tgt[r]) + " outside [0," +
                       std::to_string(vocab) + ")");
    }
    // log-softmax evaluated directly for accuracy when p is tiny
    auto row = logits.data().subspan(r * vocab, vocab);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += -(row[static_cast<std::size_t>(tgt[r])] - mx - std::log(z));
    ++counted;
  }
  const double norm =
      reduction == Reduction::kMean ? (counted ? 1.0 / static_cast<double>(counted) : 0.0) : 1.0;
  return make_result({1}, {total * norm}, {logits},
                     [probs, tgt, vocab, norm](std::span<const double> g, std::span<double* const> gi) {
                       const double s = g[0] * norm;
                       for (std::size_t r = 0; r < tgt.size(); ++r) {
                         if (tgt[r] == kIgnoreIndex) continue;
                         for (std::size_t j = 0; j < vocab; ++j)
                           gi[0][r * vocab + j] += s * (*probs)[r * vocab + j];
                         gi[0][r * vocab + static_cast<std::size_t>(tgt[r])] -= s;
                       }
                     },
                     "cross_entropy");
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::int64_t> targets) {
  for (std::int64_t t : targets)
    if (t == kIgnoreIndex) throw IndexError("cross_entropy_loss: negative target");
  return cross_entropy(logits, targets, Reduction::kMean);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.size() != n || beta.size() != n)
    throw DimensionError("layer_norm: gain/shift length does not match columns");
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  std::vector<double> out(x.size());
  auto src = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += src[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = src[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (src[i * n + j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [gamma, xhat, inv_std, m, n](std::span<const double> g, std::span<double* const> gi) {
                       const auto& h = *xhat;
                       auto gm = gamma.data();
                       for (std::size_t i = 0; i < m; ++i) {
                         if (gi[0]) {
                           double mean_d = 0.0, mean_dh = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                             const double d = g[i * n + j] * gm[j];
                             mean_d += d;
                             mean_dh += d * h[i * n + j];
                           }
                           mean_d /= static_cast<double>(n);
                           mean_dh /= static_cast<double>(n);
                           for (std::size_t j = 0; j < n; ++j) {
                             const double d = g[i * n + j] * gm[j];
                             gi[0][i * n + j] += (*inv_std)[i] * (d - mean_d - h[i * n + j] * mean_dh);
                           }
                         }
                         if (gi[1])
                           for (std::size_t j = 0; j < n; ++j) gi[1][j] += g[i * n + j] * h[i * n + j];
                         if (gi[2])
                           for (std::size_t j = 0; j < n; ++j) gi[2][j] += g[i * n + j];
                       }
                     },
                     "layer_norm");
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  require_rank(table, 2, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab)
      throw IndexError("embedding: id " + std::to_string(idx[i]) + " outside table");
    std::copy_n(table.data().begin() + idx[i] * static_cast<std::int64_t>(d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return make_result({idx.size(), d}, std::move(out), {table},
                     [idx, d](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j)
                           gi[0][static_cast<std::size_t>(idx[i]) * d + j] += g[i * d + j];
                     },
                     "embedding");
}

Tensor attention_with_weights(const Tensor& q, const Tensor& k, const Tensor& v,
                              const std::optional<Tensor>& prefix_keys,
                              const std::optional<Tensor>& prefix_values,
                              const AttentionOptions& options, std::vector<double>* weights) {
  require_rank(q, 2, "attention");
  require_same_shape(k, v, "attention");
  const std::size_t dmodel = q.dim(1);
  if (k.dim(1) != dmodel) throw DimensionError("attention: query/key width mismatch");
  if (options.heads == 0 || dmodel % options.heads != 0)
    throw DimensionError("attention: model width not divisible by head count");
  if (options.causal && k.dim(0) != q.dim(0) + options.query_offset)
    throw DimensionError("attention: causal attention needs keys = queries + query_offset");
  if (prefix_keys.has_value() != prefix_values.has_value())
    throw ContractError("attention: prefix keys and values must be supplied together");
  std::size_t prefix_len = 0;
  if (prefix_keys) {
    if (prefix_keys->shape() != prefix_values->shape())
      throw ContractError("attention: key prefix " + shape_str(prefix_keys->shape()) +
                          " and value prefix " + shape_str(prefix_values->shape()) +
                          " differ in length");
    if (prefix_keys->rank() != 2 || prefix_keys->dim(1) != dmodel)
      throw DimensionError("attention: prefix width must equal model width");
    prefix_len = prefix_keys->dim(0);
  }
  if (!options.key_valid.empty() && options.key_valid.size() != k.dim(0))
    throw DimensionError("attention: key mask length mismatch");

  kernels::AttentionShape shape{q.dim(0), k.dim(0), prefix_len, dmodel, options.heads,
                                options.causal, options.query_offset};
  auto probs = std::make_shared<std::vector<double>>(shape.heads * shape.queries *
                                                     shape.row_width());
  auto mask = std::make_shared<std::vector<unsigned char>>(options.key_valid);
  std::vector<double> out(q.size());
  kernels::AttentionArgs args;
  args.q = q.data().data();
  args.k = k.data().data();
  args.v = v.data().data();
  args.prefix_keys = prefix_len ? prefix_keys->data().data() : nullptr;
  args.prefix_values = prefix_len ? prefix_values->data().data() : nullptr;
  args.key_valid = mask->empty() ? nullptr : mask->data();
  args.out = out.data();
  args.probs = probs->data();
  kernels::attention_forward(shape, args);
  if (weights) *weights = *probs;

  std::vector<Tensor> inputs{q, k, v};
  if (prefix_len) {
    inputs.push_back(*prefix_keys);
    inputs.push_back(*prefix_values);
  }
  return make_result(
      q.shape(), std::move(out), inputs,
      [inputs, shape, probs, mask](std::span<const double> g, std::span<double* const> gi) {
        kernels::AttentionArgs a;
        a.q = inputs[0].data().data();
        a.k = inputs[1].data().data();
        a.v = inputs[2].data().data();
        if (shape.prefix_len) {
          a.prefix_keys = inputs[3].data().data();
          a.prefix_values = inputs[4].data().data();
        }
        a.key_valid = mask->empty() ? nullptr : mask->data();
        a.probs = probs->data();
        kernels::AttentionGrads grads;
        grads.d_out = g.data();
        grads.dq = gi[0];
        grads.dk = gi[1];
        grads.dv = gi[2];
        if (shape.prefix_len) {
          grads.d_prefix_keys = gi[3];
          grads.d_prefix_values = gi[4];
        }
        kernels::attention_backward(shape, a, grads);
      },
      "attention");
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::optional<Tensor>& prefix_keys,
                 const std::optional<Tensor>& prefix_values, const AttentionOptions& options) {
  return attention_with_weights(q, k, v, prefix_keys, prefix_values, options, nullptr);
}

}  // namespace eyedoc::ad
