#include "adapt/anchoring.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "adapt/error.hpp"

namespace adapt {

void TemperatureSchedule::validate() const {
  if (!(tau_min > 0.0) || !(tau_max > 0.0) || tau_min > tau_max) {
    throw ConfigError("temperature schedule needs 0 < tau_min <= tau_max");
  }
  if (total_steps == 0) throw ConfigError("temperature schedule needs total_steps >= 1");
}

double tau_at(const TemperatureSchedule& s, std::size_t step) {
  if (step > s.total_steps) {
    throw std::out_of_range("tau_at: step " + std::to_string(step) + " beyond total_steps " +
                            std::to_string(s.total_steps));
  }
  if (step == 0) return s.tau_max;
  if (step == s.total_steps) return s.tau_min;
  const double progress = static_cast<double>(step) / static_cast<double>(s.total_steps);
  return s.tau_min + 0.5 * (s.tau_max - s.tau_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void AnchoringConfig::validate() const {
  if (!(noise_std >= 0.0)) throw ConfigError("anchoring.noise_std must be >= 0");
  if (batch_size < 2) throw ConfigError("anchoring.batch_size must be >= 2 (contrastive batches need negatives)");
  if (epochs == 0) throw ConfigError("anchoring.epochs must be >= 1");
  TemperatureSchedule{tau_max, tau_min, 1}.validate();
}

ag::Var info_nce(ag::Var anchor, ag::Var other, double tau) {
  if (!(tau > 0.0)) throw ConfigError("info_nce: tau must be > 0");
  if (!anchor.value().same_shape(other.value())) {
    throw ShapeError("info_nce: " + anchor.value().shape_string() + " vs " + other.value().shape_string());
  }
  const std::size_t b = anchor.rows();
  const ag::Var logits =
      ag::scale(ag::matmul(ag::l2_normalize_rows(anchor), ag::transpose(ag::l2_normalize_rows(other))), 1.0 / tau);
  std::vector<std::size_t> targets(b);
  for (std::size_t i = 0; i < b; ++i) targets[i] = i;
  const std::vector<double> weights(b, 1.0);
  return ag::softmax_cross_entropy(logits, targets, weights, 1.0);
}

ag::Var symmetric_loss(ag::Var anchor, ag::Var other, double tau) {
  return ag::add(info_nce(anchor, other, tau), info_nce(other, anchor, tau));
}

double info_nce(const Matrix& anchor, const Matrix& other, double tau) {
  ag::Tape t;
  return info_nce(t.constant(anchor), t.constant(other), tau).value()(0, 0);
}

double symmetric_loss(const Matrix& anchor, const Matrix& other, double tau) {
  ag::Tape t;
  return symmetric_loss(t.constant(anchor), t.constant(other), tau).value()(0, 0);
}

ag::Var anchoring_loss(std::span<const ag::Var> embeddings, std::size_t anchor, double tau,
                       double noise_std, RandomStream& rng) {
  if (anchor >= embeddings.size()) throw ConfigError("anchoring_loss: anchor index out of range");
  if (embeddings.size() < 2) throw ConfigError("anchoring_loss: needs at least one non-anchor modality");
  ag::Tape& tape = *embeddings[anchor].tape;
  ag::Var total{};
  bool first = true;
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    if (m == anchor) continue;
    ag::Var other = embeddings[m];
    if (noise_std > 0.0) {
      Matrix noise(other.rows(), other.cols());
      for (double& x : noise.storage()) x = noise_std * rng.normal();
      other = ag::add(other, tape.constant(std::move(noise)));
    }
    const ag::Var term = symmetric_loss(embeddings[anchor], other, tau);
    total = first ? term : ag::add(total, term);
    first = false;
  }
  return total;
}

double anchoring_loss(std::span<const Matrix> embeddings, std::size_t anchor, double tau,
                      double noise_std, RandomStream& rng) {
  ag::Tape t;
  std::vector<ag::Var> vars;
  for (const Matrix& e : embeddings) vars.push_back(t.constant(e));
  return anchoring_loss(vars, anchor, tau, noise_std, rng).value()(0, 0);
}

Matrix gather_inputs(const Dataset& data, std::size_t modality, std::span<const std::size_t> rows) {
  const std::size_t width = data.specs[modality].input_size();
  Matrix out(rows.size(), width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& raw = data.observations[rows[i]].modalities[modality];
    if (!raw) continue;
    std::copy(raw->begin(), raw->end(), out.row(i).begin());
  }
  return out;
}

LossCurve train_anchoring(const Dataset& complete, std::vector<Encoder>& encoders,
                          const AnchoringConfig& config, const OptimizerConfig& optimizer,
                          const RandomStream& rng, bool train_anchor_head, const StepObserver& observer) {
  config.validate();
  optimizer.validate();
  if (encoders.size() != complete.specs.size()) {
    throw ConfigError("train_anchoring: " + std::to_string(encoders.size()) + " encoders for " +
                      std::to_string(complete.specs.size()) + " modalities");
  }
  if (complete.size() < 2) throw DataError("train_anchoring: need at least 2 observations");
  for (const Observation& o : complete.observations) {
    if (!o.complete()) {
      throw DataError("train_anchoring: observation " + o.id +
                      " is missing a modality; anchoring requires aligned pairs");
    }
  }
  const std::size_t anchor = anchor_index(complete.specs);

  std::vector<ParameterList*> groups;
  std::vector<std::pair<std::size_t, bool>> group_owner;  // (encoder, is_head)
  for (std::size_t m = 0; m < encoders.size(); ++m) {
    if (!encoders[m].frozen()) {
      groups.push_back(&encoders[m].body());
      group_owner.emplace_back(m, false);
    }
    if (m != anchor || train_anchor_head) {
      groups.push_back(&encoders[m].head());
      group_owner.emplace_back(m, true);
    }
  }

  OptimizerConfig opt = optimizer;
  opt.epochs = config.epochs;
  opt.batch_size = config.batch_size;
  const std::size_t steps_per_epoch = batches_per_epoch(complete.size(), config.batch_size, 2);
  const LrSchedule lr_schedule = make_schedule(opt, steps_per_epoch);
  const TemperatureSchedule tau_schedule{config.tau_max, config.tau_min, config.epochs * steps_per_epoch};
  GroupedAdamW adam(opt, groups);

  RandomStream shuffle_rng = rng.substream("anchoring").substream("data");
  RandomStream noise_rng = rng.substream("anchoring").substream("noise");

  LossCurve curve;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    for (const auto& batch : make_batches(complete.size(), config.batch_size, 2, shuffle_rng)) {
      const double tau = tau_at(tau_schedule, step);
      const double lr = lr_schedule.at(step);

      ag::Tape tape;
      std::vector<std::vector<ag::Var>> body_vars(encoders.size());
      std::vector<std::vector<ag::Var>> head_vars(encoders.size());
      std::vector<ag::Var> embeddings;
      for (std::size_t m = 0; m < encoders.size(); ++m) {
        body_vars[m] = adapt::bind(tape, encoders[m].body(), !encoders[m].frozen());
        head_vars[m] = adapt::bind(tape, encoders[m].head(), m != anchor || train_anchor_head);
        embeddings.push_back(encoders[m].forward(body_vars[m], head_vars[m],
                                                 tape.constant(gather_inputs(complete, m, batch))));
      }
      const ag::Var loss = anchoring_loss(embeddings, anchor, tau, config.noise_std, noise_rng);
      tape.backward(loss);

      std::vector<std::vector<Matrix>> grads;
      for (const auto& [m, is_head] : group_owner) {
        grads.push_back(collect_grads(tape, is_head ? head_vars[m] : body_vars[m]));
      }
      adam.step(grads, lr);

      const CurvePoint point{step, epoch, tau, lr, loss.value()(0, 0)};
      curve.steps.push_back(point);
      if (observer) observer("anchor", point);
      epoch_sum += point.loss;
      ++epoch_batches;
      ++step;
    }
    curve.epoch_means.push_back(epoch_batches ? epoch_sum / static_cast<double>(epoch_batches) : 0.0);
  }
  return curve;
}

}  // namespace adapt
