#include <benchmark/benchmark.h>

#include "adapt/fusion.hpp"
#include "adapt/optim.hpp"
#include "adapt/random.hpp"

namespace {

// One sample through the default two-block transformer. Arg: modality count.
void BM_TransformerForward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const adapt::MaskedTransformer model =
      adapt::MaskedTransformer::initialize(adapt::TransformerConfig{}, m, adapt::RandomStream(1));
  adapt::RandomStream rng(2);
  adapt::Matrix f(m + 1, model.config().d);
  for (double& v : f.storage()) v = rng.normal();
  const adapt::AvailabilityMask mask = adapt::build_mask(adapt::BinaryVector(m, 1));
  for (auto _ : state) benchmark::DoNotOptimize(adapt::transformer_forward(model, f, mask));
}
BENCHMARK(BM_TransformerForward)->Arg(3)->Arg(6);

// Forward plus backward of the fusion loss for a batch of view pairs.
void BM_FusionLossStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const std::size_t m = 3;
  const adapt::MaskedTransformer model =
      adapt::MaskedTransformer::initialize(adapt::TransformerConfig{}, m, adapt::RandomStream(3));
  adapt::RandomStream rng(4);
  std::vector<adapt::Matrix> emb;
  for (std::size_t k = 0; k < m; ++k) {
    adapt::Matrix e(batch, model.config().d);
    for (double& v : e.storage()) v = rng.normal();
    emb.push_back(std::move(e));
  }
  const std::vector<adapt::BinaryVector> va(batch, adapt::build_mask(adapt::BinaryVector{1, 1, 1}).avail);
  const std::vector<adapt::BinaryVector> vb(batch, adapt::build_mask(adapt::BinaryVector{0, 1, 1}).avail);
  for (auto _ : state) {
    adapt::ag::Tape tape;
    const auto params = adapt::bind(tape, model.params(), true);
    std::vector<adapt::ag::Var> ev;
    for (const adapt::Matrix& e : emb) ev.push_back(tape.constant(e));
    const auto a = adapt::transformer_forward(model, params, ev, va).cls;
    const auto b = adapt::transformer_forward(model, params, ev, vb).cls;
    const auto loss = adapt::fusion_loss(a, b, 0.1);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_FusionLossStep)->Arg(32);

}  // namespace
