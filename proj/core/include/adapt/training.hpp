#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "adapt/optim.hpp"
#include "adapt/random.hpp"

namespace adapt {

struct CurvePoint {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double tau = 0.0;
  double lr = 0.0;
  double loss = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct LossCurve {
  std::vector<CurvePoint> steps;
  std::vector<double> epoch_means;

  friend bool operator==(const LossCurve&, const LossCurve&) = default;
};

// Columns: step, epoch, tau, loss.
void write_loss_csv(const LossCurve& curve, const std::filesystem::path& path);

// Called once per optimization step with the stage name and the point.
using StepObserver = std::function<void(const std::string& stage, const CurvePoint&)>;

// Shuffled index batches for one epoch. A trailing batch smaller than
// min_batch is dropped.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::size_t min_batch, RandomStream& rng);
std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size, std::size_t min_batch);

// AdamW over several parameter groups sharing one global-norm clip.
class GroupedAdamW {
 public:
  GroupedAdamW(const OptimizerConfig& cfg, std::vector<ParameterList*> groups);
  // grads[g] is aligned with *groups[g]. Returns the pre-clip global norm.
  double step(std::vector<std::vector<Matrix>>& grads, double lr);

 private:
  OptimizerConfig cfg_;
  std::vector<ParameterList*> groups_;
  std::vector<AdamW> optimizers_;
};

}  // namespace adapt
