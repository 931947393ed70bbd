#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "adapt/autograd.hpp"
#include "adapt/matrix.hpp"

namespace adapt {

struct Parameter {
  std::string name;
  Matrix value;
  // Excluded from decoupled weight decay (biases, norm scales, embeddings).
  bool no_decay = false;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

using ParameterList = std::vector<Parameter>;

std::vector<ag::Var> bind(ag::Tape& tape, const ParameterList& params, bool requires_grad);
std::vector<Matrix> collect_grads(const ag::Tape& tape, std::span<const ag::Var> vars);
const Parameter& find_parameter(const ParameterList& params, const std::string& name);
std::size_t parameter_count(const ParameterList& params);

struct OptimizerConfig {
  double lr = 1e-4;
  double weight_decay = 0.05;
  double warmup_epochs = 4.0;
  std::size_t epochs = 12;
  std::size_t batch_size = 32;
  double grad_clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Linear warm-up from 0 to base lr over the warm-up steps, then cosine decay
// to 0 at total_steps.
class LrSchedule {
 public:
  LrSchedule(double base_lr, std::size_t warmup_steps, std::size_t total_steps);
  double at(std::size_t step) const;

 private:
  double base_lr_;
  std::size_t warmup_steps_;
  std::size_t total_steps_;
};

LrSchedule make_schedule(const OptimizerConfig& cfg, std::size_t steps_per_epoch);

// Scales all gradients in place so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(std::span<Matrix> grads, double max_norm);

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(const OptimizerConfig& cfg, const ParameterList& params);
  void step(ParameterList& params, std::span<const Matrix> grads, double lr);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t t_ = 0;
};

}  // namespace adapt
