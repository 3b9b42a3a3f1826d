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

// Serial reference vs OpenMP kernels at the shapes the toy decoder uses.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "eyedoc/kernels.hpp"

namespace k = eyedoc::kernels;

namespace {

std::vector<double> random_vec(std::size_t n) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

template <auto Fn>
void BM_Matmul(benchmark::State& state) {
  const std::size_t m = state.range(0), kk = state.range(1), n = state.range(2);
  auto a = random_vec(m * kk), b = random_vec(kk * n);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Fn(m, kk, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * m * kk * n));
}

template <auto Fn>
void BM_Attention(benchmark::State& state) {
  const std::size_t t = state.range(0), prefix = state.range(1), d = 256;
  k::AttentionShape s{t, t, prefix, d, 4, true};
  auto q = random_vec(t * d), kk = random_vec(t * d), v = random_vec(t * d);
  auto pk = random_vec(prefix * d + 1), pv = random_vec(prefix * d + 1);
  std::vector<double> out(t * d), probs(4 * t * s.row_width());
  for (auto _ : state) {
    Fn(s, {q.data(), kk.data(), v.data(), pk.data(), pv.data(), nullptr, out.data(),
           probs.data()});
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<k::serial::matmul_nn>)->Args({256, 256, 256})->Args({300, 256, 1024});
BENCHMARK(BM_Matmul<k::omp::matmul_nn>)->Args({256, 256, 256})->Args({300, 256, 1024});
BENCHMARK(BM_Matmul<k::serial::matmul_nt>)->Args({256, 256, 256});
BENCHMARK(BM_Matmul<k::omp::matmul_nt>)->Args({256, 256, 256});
BENCHMARK(BM_Matmul<k::serial::matmul_tn>)->Args({256, 256, 256});
BENCHMARK(BM_Matmul<k::omp::matmul_tn>)->Args({256, 256, 256});
BENCHMARK(BM_Attention<k::serial::attention_forward>)->Args({256, 0})->Args({256, 100});
BENCHMARK(BM_Attention<k::omp::attention_forward>)->Args({256, 0})->Args({256, 100});

BENCHMARK_MAIN();
