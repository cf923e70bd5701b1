#include <benchmark/benchmark.h>

#include <random>

#include "morphscope/metrics.hpp"

using namespace morphscope;

namespace {

LabeledScores scores(std::size_t n) {
  std::mt19937_64 rng(n);
  std::normal_distribution<double> g(0.0, 1.0);
  LabeledScores s;
  for (std::size_t i = 0; i < n; ++i) {
    s.bona.push_back(g(rng));
    s.morph.push_back(g(rng) + 1.5);
  }
  return s;
}

void BM_DEer(benchmark::State& state) {
  const LabeledScores s = scores(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(d_eer(s));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DEer)->RangeMultiplier(4)->Range(64, 16384)->Complexity();

void BM_BpcerAtMacer(benchmark::State& state) {
  const LabeledScores s = scores(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(bpcer_at_macer(s, 5.0));
}
BENCHMARK(BM_BpcerAtMacer)->Arg(1024)->Arg(16384);

}  // namespace
