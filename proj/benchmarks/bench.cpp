#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "egosc/backbone.hpp"
#include "egosc/kernels.hpp"
#include "egosc/rng.hpp"
#include "egosc/synth.hpp"
#include "egosc/tensor.hpp"
#include "egosc/vad.hpp"

using namespace egosc;

static void BM_gemm(benchmark::State& state) {
  const auto n = state.range(0);
  Pcg32 rng(1);
  Tensor<float> a = Tensor<float>::randn({n, n}, rng);
  Tensor<float> b = Tensor<float>::randn({n, n}, rng);
  Tensor<float> c({n, n});
  for (auto _ : state) {
    kern::gemm_nn(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_gemm)->Arg(128)->Arg(256)->Arg(512);

static void BM_conv_encode(benchmark::State& state) {
  BackboneConfig cfg;
  auto model = init_backbone<float>(cfg, 1);
  auto bound = bind_backbone(model, false);
  Pcg32 rng(2);
  std::vector<float> samples(16000);
  for (auto& v : samples) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  for (auto _ : state) {
    auto z = conv_encode(bound, samples);
    benchmark::DoNotOptimize(z->value.data());
  }
}
BENCHMARK(BM_conv_encode);

static void BM_backbone_forward(benchmark::State& state) {
  BackboneConfig cfg;
  auto model = init_backbone<float>(cfg, 1);
  auto bound = bind_backbone(model, false);
  Pcg32 rng(3);
  std::vector<float> samples(16000);
  for (auto& v : samples) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  const std::vector<std::uint8_t> mask(static_cast<std::size_t>(cfg.out_frames(16000)), 0);
  for (auto _ : state) {
    auto z = conv_encode(bound, samples);
    auto hs = contextualize(bound, z, mask);
    benchmark::DoNotOptimize(hs.back()->value.data());
  }
}
BENCHMARK(BM_backbone_forward);

static void BM_vad(benchmark::State& state) {
  auto s = generate_session(default_profiles(), 60.0, 4, SynthConfig{}, "bench");
  for (auto _ : state) {
    auto segs = detect_speech(s.child_channel, VadParams{});
    benchmark::DoNotOptimize(segs.data());
  }
}
BENCHMARK(BM_vad);

static void BM_synth_session(benchmark::State& state) {
  for (auto _ : state) {
    auto s = generate_session(default_profiles(), 30.0, 5, SynthConfig{}, "bench");
    benchmark::DoNotOptimize(s.child_channel.samples.data());
  }
}
BENCHMARK(BM_synth_session);

BENCHMARK_MAIN();
