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

#include "eyedoc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "eyedoc/errors.hpp"

namespace eyedoc::ad {

namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_enabled = true;

std::uint64_t next_sequence() { return ++g_sequence; }

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> data,
                                bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("tensor: zero-sized dimension in " + shape_str(shape));
  check_finite(data, "tensor");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->sequence = next_sequence();
  node->op = "leaf";
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(where) + ": non-finite value");
    }
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Node& Tensor::node() const {
  if (!node_) throw ContractError("tensor: use of undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("tensor: axis out of range");
  return s[axis];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("tensor: item() on non-scalar " + shape_str(shape()));
  return node().data[0];
}

void Tensor::set_requires_grad(bool flag) {
  if (!node().is_leaf) throw ContractError("tensor: requires_grad can only change on leaves");
  node().requires_grad = flag;
}

void Tensor::zero_grad() {
  Node& n = node();
  n.grad.assign(n.data.size(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), node().data, requires_grad);
}

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> const& inputs, BackwardFn backward,
                   const char* op) {
  check_finite(data, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->sequence = next_sequence();
  node->op = op;
  node->is_leaf = false;
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  const Node& root = node();
  if (root.data.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) {
    throw ContractError("backward: loss does not depend on any trainable tensor");
  }

  // Collect the reachable sub-graph of nodes that need gradients.
  std::vector<Node*> order;
  std::unordered_map<Node*, bool> seen;
  std::vector<Node*> stack{node_.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || seen[n]) continue;
    seen[n] = true;
    order.push_back(n);
    for (const auto& in : n->inputs) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->sequence > b->sequence; });

  std::unordered_map<Node*, std::vector<double>> scratch;
  scratch[node_.get()] = {1.0};
  std::vector<double*> input_grads;
  for (Node* n : order) {
    if (n->is_leaf) continue;
    auto it = scratch.find(n);
    if (it == scratch.end()) continue;
    std::vector<double> g = std::move(it->second);
    scratch.erase(it);
    input_grads.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node* in = n->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& buf = scratch[in];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      input_grads[i] = buf.data();
    }
    n->backward(g, input_grads);
  }

  // Leaves receive their total gradient exactly once.
  for (Node* n : order) {
    if (!n->is_leaf) continue;
    auto it = scratch.find(n);
    if (it == scratch.end()) continue;
    check_finite(it->second, "backward");
    if (n->grad.empty()) {
      n->grad = std::move(it->second);
    } else {
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += it->second[i];
    }
  }
}

}  // namespace eyedoc::ad
