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
#include <functional>
#include <string>
#include <vector>

#include "eyedoc/tensor.hpp"

namespace eyedoc::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<param>[index]" of the largest relative error
  bool passed = false;
};

/// Relative error with an absolute floor so that vanishing gradients
/// compare on an absolute scale: |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-3);

/// Compares backward() against central differences for a scalar function
/// of one tensor.
GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                  const Tensor& point, double tol, double h = 1e-5);

/// Multi-parameter form. `loss` rebuilds the graph from the current
/// parameter values. At most `max_entries` coordinates per parameter are
/// probed, chosen with a seeded generator.
GradCheckReport finite_diff_check_params(const std::function<Tensor()>& loss,
                                         std::vector<Tensor> params,
                                         const std::vector<std::string>& names, double tol,
                                         double h = 1e-5, std::size_t max_entries = 12,
                                         std::uint64_t seed = 7);

}  // namespace eyedoc::ad
