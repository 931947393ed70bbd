#include "adapt/optim.hpp"

#include <cmath>
#include <numbers>

#include "adapt/error.hpp"

namespace adapt {

std::vector<ag::Var> bind(ag::Tape& tape, const ParameterList& params, bool requires_grad) {
  std::vector<ag::Var> vars;
  vars.reserve(params.size());
  for (const Parameter& p : params) vars.push_back(tape.leaf(p.value, requires_grad));
  return vars;
}

std::vector<Matrix> collect_grads(const ag::Tape& tape, std::span<const ag::Var> vars) {
  std::vector<Matrix> grads;
  grads.reserve(vars.size());
  for (ag::Var v : vars) grads.push_back(tape.grad(v));
  return grads;
}

const Parameter& find_parameter(const ParameterList& params, const std::string& name) {
  for (const Parameter& p : params)
    if (p.name == name) return p;
  throw ConfigError("no parameter named '" + name + "'");
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const Parameter& p : params) n += p.value.size();
  return n;
}

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("optimizer.lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (!(warmup_epochs >= 0.0)) throw ConfigError("optimizer.warmup_epochs must be >= 0");
  if (epochs == 0) throw ConfigError("optimizer.epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("optimizer.batch_size must be >= 2");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("optimizer.grad_clip_norm must be > 0");
}

LrSchedule::LrSchedule(double base_lr, std::size_t warmup_steps, std::size_t total_steps)
    : base_lr_(base_lr), warmup_steps_(warmup_steps), total_steps_(total_steps) {}

double LrSchedule::at(std::size_t step) const {
  if (warmup_steps_ > 0 && step < warmup_steps_) {
    return base_lr_ * static_cast<double>(step + 1) / static_cast<double>(warmup_steps_);
  }
  if (total_steps_ <= warmup_steps_) return base_lr_;
  const double progress = std::min(
      1.0, static_cast<double>(step - warmup_steps_) / static_cast<double>(total_steps_ - warmup_steps_));
  return 0.5 * base_lr_ * (1.0 + std::cos(std::numbers::pi * progress));
}

LrSchedule make_schedule(const OptimizerConfig& cfg, std::size_t steps_per_epoch) {
  const std::size_t total = cfg.epochs * steps_per_epoch;
  auto warmup = static_cast<std::size_t>(std::llround(cfg.warmup_epochs * static_cast<double>(steps_per_epoch)));
  if (warmup > total) warmup = total;
  return LrSchedule(cfg.lr, warmup, total);
}

double clip_global_norm(std::span<Matrix> grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& g : grads)
    for (double x : g.storage()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Matrix& g : grads)
      for (double& x : g.storage()) x *= s;
  }
  return norm;
}

AdamW::AdamW(const OptimizerConfig& cfg, const ParameterList& params) : cfg_(cfg) {
  for (const Parameter& p : params) {
    m_.emplace_back(p.value.rows(), p.value.cols());
    v_.emplace_back(p.value.rows(), p.value.cols());
  }
}

void AdamW::step(ParameterList& params, std::span<const Matrix> grads, double lr) {
  if (grads.size() != params.size() || params.size() != m_.size()) {
    throw ShapeError("AdamW::step: parameter/gradient count mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p].value.storage();
    const auto& g = grads[p].storage();
    if (g.size() != w.size()) throw ShapeError("AdamW::step: gradient shape mismatch for " + params[p].name);
    auto& m = m_[p].storage();
    auto& v = v_[p].storage();
    const double decay = params[p].no_decay ? 0.0 : cfg_.weight_decay;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + decay * w[i]);
    }
  }
}

}  // namespace adapt
