#include <benchmark/benchmark.h>

#include "adapt/data.hpp"
#include "adapt/encoders.hpp"
#include "adapt/random.hpp"

namespace {

// Batch of 32 through one default-sized encoder. Arg: modality index
// (0 feature vector, 1 grid, 2 sequence).
void BM_EncodeBatch(benchmark::State& state) {
  adapt::ModelConfig config;
  config.modalities = adapt::GeneratorConfig::defaults().modality_specs;
  const auto encoders = adapt::build_encoders(config, adapt::RandomStream(1));
  const adapt::Encoder& e = encoders.at(static_cast<std::size_t>(state.range(0)));
  adapt::RandomStream rng(2);
  adapt::Matrix x(32, e.spec().input_size());
  for (double& v : x.storage()) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(e.encode_batch(x));
  state.SetLabel(e.spec().name);
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_EncodeBatch)->DenseRange(0, 2);

}  // namespace
