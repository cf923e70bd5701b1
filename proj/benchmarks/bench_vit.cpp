#include <benchmark/benchmark.h>

#include <random>

#include "morphscope/vit.hpp"

using namespace morphscope;

namespace {

// One ViT-L encoder block over 145 tokens.
void BM_EncoderBlock(benchmark::State& state) {
  ViTConfig c;
  c.depth = 1;
  const WeightBundle b = random_bundle(c, 1);
  const LayerParams p = layer_params(b, 0);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> g(0.0f, 1.0f);
  TokenSequence z{Matrix(c.sequence_length(), c.hidden_dim), 0};
  for (float& v : z.tokens.values()) v = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(encoder_block(z, p, c));
}
BENCHMARK(BM_EncoderBlock)->Unit(benchmark::kMillisecond);

void BM_Patchify(benchmark::State& state) {
  const ViTConfig c;
  const ImageTensor img(384, 384, 0.5f);
  for (auto _ : state) benchmark::DoNotOptimize(patchify(img, c));
}
BENCHMARK(BM_Patchify);

}  // namespace
