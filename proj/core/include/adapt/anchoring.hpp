#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adapt/autograd.hpp"
#include "adapt/data.hpp"
#include "adapt/encoders.hpp"
#include "adapt/optim.hpp"
#include "adapt/random.hpp"
#include "adapt/training.hpp"

namespace adapt {

struct TemperatureSchedule {
  double tau_max = 0.2;
  double tau_min = 0.05;
  std::size_t total_steps = 1;

  void validate() const;
};

// tau_min + (tau_max - tau_min) * (1 + cos(pi * step / total_steps)) / 2.
// Throws std::out_of_range when step > total_steps.
double tau_at(const TemperatureSchedule& schedule, std::size_t step);

struct AnchoringConfig {
  // Std of the Gaussian noise added to non-anchor embeddings before the loss.
  double noise_std = 0.1;
  double tau_max = 0.2;
  double tau_min = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 12;

  void validate() const;
};

// InfoNCE of anchor rows against other rows (row i of each is a positive
// pair), summed over the batch.
double info_nce(const Matrix& anchor, const Matrix& other, double tau);
double symmetric_loss(const Matrix& anchor, const Matrix& other, double tau);
ag::Var info_nce(ag::Var anchor, ag::Var other, double tau);
ag::Var symmetric_loss(ag::Var anchor, ag::Var other, double tau);

// Sum of symmetric losses between the anchor and every other modality.
// Non-anchor embeddings get fresh N(0, noise_std^2) noise, drawn in modality
// order from rng.
ag::Var anchoring_loss(std::span<const ag::Var> embeddings, std::size_t anchor, double tau,
                       double noise_std, RandomStream& rng);
double anchoring_loss(std::span<const Matrix> embeddings, std::size_t anchor, double tau,
                      double noise_std, RandomStream& rng);

// Stacks one modality's raw arrays for the given observation indices (B x input_size).
// Absent entries become zero rows.
Matrix gather_inputs(const Dataset& data, std::size_t modality, std::span<const std::size_t> rows);

// Stage-1 training. Every observation must carry every modality. The anchor
// body never changes; its head trains when train_anchor_head is set.
LossCurve train_anchoring(const Dataset& complete, std::vector<Encoder>& encoders,
                          const AnchoringConfig& config, const OptimizerConfig& optimizer,
                          const RandomStream& rng, bool train_anchor_head = true,
                          const StepObserver& observer = {});

}  // namespace adapt
