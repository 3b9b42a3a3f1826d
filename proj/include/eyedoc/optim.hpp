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
#include <vector>

#include "eyedoc/tensor.hpp"

namespace eyedoc::ad {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay: the decay shrinks the parameter
/// directly and never enters the moment estimates.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  /// Applies one update from the gradients currently stored on the
  /// parameters. Throws ContractError if any parameter has no gradient.
  void step();

  void zero_grad();
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::uint64_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<Tensor>& params() const { return params_; }

  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_ = 0;
};

/// Rescales the gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping. Parameters without gradients are
/// ignored.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace eyedoc::ad
