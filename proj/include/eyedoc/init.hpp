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

#include <random>

#include "eyedoc/tensor.hpp"

namespace eyedoc {

/// Seeded generator used for every initialisation and masking decision.
using Rng = std::mt19937_64;

inline ad::Tensor normal_tensor(ad::Shape shape, double sd, Rng& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = dist(rng);
  return ad::Tensor::from(std::move(shape), std::move(v));
}

inline ad::Tensor identity_tensor(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return ad::Tensor::from({n, n}, std::move(v));
}

}  // namespace eyedoc
