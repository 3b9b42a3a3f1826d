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

#include "eyedoc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace eyedoc::ad {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                  const Tensor& point, double tol, double h) {
  Tensor x = point.clone(true);
  return finite_diff_check_params([&] { return f(x); }, {x}, {"x"}, tol, h,
                                  x.size());
}

GradCheckReport finite_diff_check_params(const std::function<Tensor()>& loss,
                                         std::vector<Tensor> params,
                                         const std::vector<std::string>& names, double tol,
                                         double h, std::size_t max_entries,
                                         std::uint64_t seed) {
  for (Tensor& p : params) p.clear_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : params) {
    if (p.has_grad())
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    else
      analytic.emplace_back(p.size(), 0.0);
  }

  GradCheckReport report;
  std::mt19937_64 rng(seed);
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
      std::sort(idx.begin(), idx.end());
    }
    auto w = p.mutable_data();
    for (std::size_t i : idx) {
      const double saved = w[i];
      w[i] = saved + h;
      const double up = loss().item();
      w[i] = saved - h;
      const double down = loss().item();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = relative_error(analytic[pi][i], numeric);
      const double abs = std::abs(analytic[pi][i] - numeric);
      report.max_abs_error = std::max(report.max_abs_error, abs);
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = (pi < names.size() ? names[pi] : "param" + std::to_string(pi)) + "[" +
                       std::to_string(i) + "]";
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace eyedoc::ad
