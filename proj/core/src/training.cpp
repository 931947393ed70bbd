#include "adapt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "adapt/error.hpp"
#include "json_convert.hpp"

namespace adapt {

void write_loss_csv(const LossCurve& curve, const std::filesystem::path& path) {
  std::string text = "step,epoch,tau,loss\n";
  char buf[128];
  for (const CurvePoint& p : curve.steps) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g\n", p.step, p.epoch, p.tau, p.loss);
    text += buf;
  }
  write_text_atomic(path, text);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::size_t min_batch, RandomStream& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < min_batch) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size, std::size_t min_batch) {
  const std::size_t full = n / batch_size;
  const std::size_t rest = n % batch_size;
  return full + (rest >= min_batch && rest > 0 ? 1 : 0);
}

GroupedAdamW::GroupedAdamW(const OptimizerConfig& cfg, std::vector<ParameterList*> groups)
    : cfg_(cfg), groups_(std::move(groups)) {
  for (ParameterList* g : groups_) optimizers_.emplace_back(cfg_, *g);
}

double GroupedAdamW::step(std::vector<std::vector<Matrix>>& grads, double lr) {
  if (grads.size() != groups_.size()) throw ShapeError("GroupedAdamW: group count mismatch");
  double sq = 0.0;
  for (auto& g : grads)
    for (Matrix& m : g)
      for (double x : m.storage()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > cfg_.grad_clip_norm && norm > 0.0) {
    const double s = cfg_.grad_clip_norm / norm;
    for (auto& g : grads)
      for (Matrix& m : g)
        for (double& x : m.storage()) x *= s;
  }
  for (std::size_t i = 0; i < groups_.size(); ++i) optimizers_[i].step(*groups_[i], grads[i], lr);
  return norm;
}

}  // namespace adapt
