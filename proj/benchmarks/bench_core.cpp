// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <cmath>

#include "hdriqa/eval.hpp"
#include "hdriqa/model.hpp"
#include "hdriqa/nn.hpp"
#include "hdriqa/preprocess.hpp"
#include "hdriqa/rng.hpp"

using namespace hdriqa;

namespace {

nn::Tensor noise(std::vector<std::size_t> shape, Rng& rng) {
  nn::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal01(rng);
  return t;
}

// First E-Net layer shape: 64 kernels of 7x7 over a batch of 32px patches.
void BM_Conv7(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const nn::Tensor x = noise({n, 1, 32, 32}, rng), k = noise({64, 1, 7, 7}, rng), b = noise({64}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d_valid(x, k, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Conv7)->Arg(1)->Arg(64);

void BM_Conv5Wide(benchmark::State& state) {
  Rng rng(2);
  const nn::Tensor x = noise({64, 64, 13, 13}, rng), k = noise({128, 64, 5, 5}, rng), b = noise({128}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d_valid(x, k, b));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Conv5Wide)->Unit(benchmark::kMillisecond);

void BM_ENetForward(benchmark::State& state) {
  const ModelBundle bundle = create_bundle(ModelConfig{}, 3);
  ENet enet(bundle.config);
  Rng rng(4);
  nn::Tensor x({64, 1, 32, 32});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = uniform01(rng);
  for (auto _ : state) benchmark::DoNotOptimize(enet.forward(bundle.enet, x, false, nullptr));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ENetForward)->Unit(benchmark::kMillisecond);

void BM_Krcc(benchmark::State& state) {
  Rng rng(5);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = std::floor(uniform(rng, 0.0, 50.0));
    b[i] = a[i] + normal01(rng) * 10.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(krcc(a, b));
  state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Krcc)->RangeMultiplier(8)->Range(64, 32768)->Complexity(benchmark::oNLogN);

void BM_Mscn(benchmark::State& state) {
  Rng rng(6);
  const int s = static_cast<int>(state.range(0));
  Plane p(s, s);
  for (double& v : p.data) v = uniform(rng, 1.0, 4000.0);
  for (auto _ : state) benchmark::DoNotOptimize(mscn_map(p, 1.0));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(p.data.size() * sizeof(double)));
}
BENCHMARK(BM_Mscn)->Arg(32)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
