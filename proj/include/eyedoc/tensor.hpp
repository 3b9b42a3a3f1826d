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

// Dense double-precision tensor with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared node storage. Every op executed
// while gradient recording is enabled stamps its output node with a
// monotonically increasing sequence number and a closure that maps the
// output gradient onto its inputs; `backward` replays those closures in
// exactly reverse execution order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace eyedoc::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

/// Receives an output gradient and adds contributions into the gradient
/// buffers of its inputs. `input_grads[i]` is null when input i does not
/// need a gradient.
using BackwardFn = std::function<void(std::span<const double> out_grad,
                                      std::span<double* const> input_grads)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  std::string op;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return node().data.size(); }

  std::span<const double> data() const { return node().data; }
  /// Mutable access for parameter updates and test setup. Writes bypass
  /// the tape; do not mutate tensors that already feed a live graph.
  std::span<double> mutable_data() { return node().data; }
  double item() const;
  double at(std::size_t i) const { return node().data.at(i); }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return !node().grad.empty(); }
  std::span<const double> grad() const { return node().grad; }
  std::span<double> mutable_grad() { return node().grad; }
  void zero_grad();
  void clear_grad() { node().grad.clear(); }

  /// Deep copy detached from any graph.
  Tensor clone(bool requires_grad = false) const;
  /// Same storage values, new leaf without history.
  Tensor detach() const { return clone(false); }

  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Runs reverse-mode differentiation from this scalar.
  void backward() const;

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  Node& node() const;

  std::shared_ptr<Node> node_;

  friend Tensor make_result(Shape, std::vector<double>,
                            std::vector<Tensor> const&, BackwardFn,
                            const char*);
};

/// Creates an op output. Records history only when recording is enabled
/// and some input requires a gradient. Rejects non-finite results.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> const& inputs, BackwardFn backward,
                   const char* op);

/// Throws NumericError when any value is NaN or infinite.
void check_finite(std::span<const double> values, const char* where);

/// Thread-local switch for graph recording.
bool grad_enabled();

/// Disables graph recording for its lifetime on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace eyedoc::ad
