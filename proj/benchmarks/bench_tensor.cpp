#include <benchmark/benchmark.h>

#include <random>

#include "morphscope/tensor.hpp"

using namespace morphscope;

namespace {

Matrix filled(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Matrix m(r, c);
  for (float& v : m.values()) v = u(rng);
  return m;
}

// Token-by-hidden times hidden-by-out, the shapes of one encoder layer.
void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const Matrix a = filled(m, k, 1), b = filled(k, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.counters["GFLOPS"] =
      benchmark::Counter(2.0 * m * k * n, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Matmul)->Args({145, 1024, 1024})->Args({145, 1024, 4096})->Args({145, 4096, 1024})->Args({145, 64, 145});

void BM_LayerNorm(benchmark::State& state) {
  const Matrix x = filled(145, 1024, 3);
  const std::vector<float> gamma(1024, 1.0f), beta(1024, 0.0f);
  for (auto _ : state) benchmark::DoNotOptimize(layer_norm_rows(x, gamma, beta));
}
BENCHMARK(BM_LayerNorm);

void BM_Softmax(benchmark::State& state) {
  const Matrix x = filled(145, 145, 4);
  for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(x));
}
BENCHMARK(BM_Softmax);

}  // namespace
