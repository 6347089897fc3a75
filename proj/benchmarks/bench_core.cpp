#include <benchmark/benchmark.h>

#include <random>

#include "dff/heatmap.hpp"
#include "dff/nmf.hpp"
#include "dff/refine.hpp"

using namespace dff;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Grid random_grid(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Grid g(n, n);
  for (auto& v : g.values) v = u(rng);
  return g;
}

// rows ~ 10 images of 14x14 conv5 positions, 512 channels
void BM_MultiplicativeUpdate(benchmark::State& state) {
  const auto k = state.range(0);
  const Matrix a = random_matrix(1960, 512, 1);
  Matrix h = random_matrix(1960, k, 2), w = random_matrix(k, 512, 3);
  for (auto _ : state) {
    multiplicative_update_inplace(a, h, w);
    benchmark::DoNotOptimize(h.data());
  }
}
BENCHMARK(BM_MultiplicativeUpdate)->Arg(1)->Arg(3)->Arg(5)->Arg(10);

void BM_Factorize(benchmark::State& state) {
  const FeatureMatrix a(random_matrix(1960, 512, 4));
  for (auto _ : state) benchmark::DoNotOptimize(nmf_factorize(a, {.k = 3, .max_iters = 100}));
}
BENCHMARK(BM_Factorize)->Unit(benchmark::kMillisecond);

void BM_GuidedFilter(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Grid guide = random_grid(n, 5), src = random_grid(n, 6);
  for (auto _ : state) benchmark::DoNotOptimize(guided_filter(guide, src, 30, 1e-4));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_GuidedFilter)->Arg(224)->Arg(512);

void BM_BilinearUpsample(benchmark::State& state) {
  const Grid m = random_grid(14, 7);
  for (auto _ : state) benchmark::DoNotOptimize(bilinear_upsample(m, 224, 224));
}
BENCHMARK(BM_BilinearUpsample);

void BM_MeanField(benchmark::State& state) {
  HeatMapStack s{"x", 224, 224, {random_grid(224, 8), random_grid(224, 9), random_grid(224, 10)}};
  const Grid guide = random_grid(224, 11);
  const RefineConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(meanfield_refine_image(s, guide, cfg, 1.0, 0.5));
}
BENCHMARK(BM_MeanField)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
