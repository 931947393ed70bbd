#include <benchmark/benchmark.h>

#include "adapt/fusion.hpp"
#include "adapt/random.hpp"

namespace {

adapt::Matrix random_matrix(adapt::RandomStream& rng, std::size_t rows, std::size_t cols) {
  adapt::Matrix m(rows, cols);
  for (double& x : m.storage()) x = rng.normal();
  return m;
}

// Args: modality count, model width.
void BM_MaskedAttention(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const std::size_t heads = 4;
  adapt::RandomStream rng(1);
  const adapt::AttentionWeights w{random_matrix(rng, d, d), random_matrix(rng, d, d), random_matrix(rng, d, d),
                                  random_matrix(rng, d, d), heads};
  const adapt::Matrix f = random_matrix(rng, m + 1, d);
  adapt::BinaryVector avail(m, 1);
  avail[0] = 0;
  const adapt::AvailabilityMask mask = adapt::build_mask(avail);
  for (auto _ : state) benchmark::DoNotOptimize(adapt::masked_attention(f, mask, w));
}
BENCHMARK(BM_MaskedAttention)->Args({3, 32})->Args({5, 32})->Args({3, 128});

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  adapt::RandomStream rng(2);
  const adapt::Matrix a = random_matrix(rng, n, n), b = random_matrix(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(adapt::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128);

}  // namespace
