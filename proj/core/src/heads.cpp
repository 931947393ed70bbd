#include "adapt/heads.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "adapt/error.hpp"
#include "adapt/fusion.hpp"
#include "adapt/metrics.hpp"

namespace adapt {

namespace {

void check_labels(std::span<const std::size_t> labels, std::size_t n_classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " is outside [0, " + std::to_string(n_classes) + ")");
    }
  }
}

std::vector<double> resolve_weights(const ProbeConfig& config, std::span<const std::size_t> labels) {
  if (!config.class_weights.empty()) return config.class_weights;
  return inverse_frequency_weights(labels, config.n_classes);
}

// Mini-batch AdamW over `params` with a cosine schedule and no warm-up.
using LogitGraph = std::function<ag::Var(ag::Tape&, std::span<const ag::Var>, ag::Var)>;

void fit(ParameterList& params, const LogitGraph& graph, const Matrix& x, std::span<const std::size_t> labels,
         const ProbeConfig& config, RandomStream& rng, const std::string& stage, const StepObserver& observer) {
  config.validate();
  if (x.rows() != labels.size()) {
    throw ShapeError(stage + ": " + std::to_string(x.rows()) + " rows for " + std::to_string(labels.size()) +
                     " labels");
  }
  check_labels(labels, config.n_classes);
  if (std::set<std::size_t>(labels.begin(), labels.end()).size() < 2) {
    throw DataError(stage + ": training labels hold a single class");
  }
  const std::vector<double> weights = resolve_weights(config, labels);

  OptimizerConfig opt;
  opt.lr = config.lr;
  opt.weight_decay = config.weight_decay;
  opt.warmup_epochs = 0.0;
  opt.epochs = config.epochs;
  opt.batch_size = config.batch_size;
  const std::size_t batch = std::min(config.batch_size, x.rows());
  const LrSchedule schedule = make_schedule(opt, batches_per_epoch(x.rows(), batch, 1));
  std::vector<ParameterList*> groups{&params};
  GroupedAdamW adam(opt, groups);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& rows : make_batches(x.rows(), batch, 1, rng)) {
      Matrix xb(rows.size(), x.cols());
      std::vector<std::size_t> yb(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), xb.row(i).begin());
        yb[i] = labels[rows[i]];
      }
      ag::Tape tape;
      const auto p = adapt::bind(tape, params, true);
      const ag::Var loss = weighted_cross_entropy(graph(tape, p, tape.constant(std::move(xb))), yb, weights);
      tape.backward(loss);
      std::vector<std::vector<Matrix>> grads{collect_grads(tape, p)};
      const double lr = schedule.at(step);
      adam.step(grads, lr);
      if (observer) observer(stage, CurvePoint{step, epoch, 0.0, lr, loss.value()(0, 0)});
      ++step;
    }
  }
}

ag::Var linear_graph(ag::Tape&, std::span<const ag::Var> p, ag::Var x) {
  return ag::add_row(ag::matmul(x, p[0]), p[1]);
}

ag::Var mlp_graph(ag::Tape&, std::span<const ag::Var> p, ag::Var x) {
  return ag::add_row(ag::matmul(ag::gelu(ag::add_row(ag::matmul(x, p[0]), p[1])), p[2]), p[3]);
}

Matrix rows_of(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  return out;
}

}  // namespace

double weighted_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels,
                              std::span<const double> weights) {
  ag::Tape t;
  return weighted_cross_entropy(t.constant(logits), labels, weights).value()(0, 0);
}

ag::Var weighted_cross_entropy(ag::Var logits, std::span<const std::size_t> labels,
                               std::span<const double> weights) {
  const std::size_t c = logits.cols();
  if (logits.rows() != labels.size()) {
    throw ShapeError("weighted_cross_entropy: " + logits.value().shape_string() + " logits for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (weights.size() != c) {
    throw ShapeError("weighted_cross_entropy: " + std::to_string(weights.size()) + " class weights for " +
                     std::to_string(c) + " classes");
  }
  if (labels.empty()) throw DataError("weighted_cross_entropy: empty batch");
  check_labels(labels, c);
  std::vector<double> row_weights(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) row_weights[i] = weights[labels[i]];
  return ag::softmax_cross_entropy(logits, labels, row_weights, static_cast<double>(labels.size()));
}

std::vector<double> inverse_frequency_weights(std::span<const std::size_t> labels, std::size_t n_classes) {
  check_labels(labels, n_classes);
  std::vector<double> counts(n_classes, 0.0);
  for (std::size_t y : labels) counts[y] += 1.0;
  std::vector<double> w(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) w[k] = 1.0 / std::max(counts[k], 1.0);
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(n_classes);
  for (double& x : w) x /= mean;
  return w;
}

void ProbeConfig::validate() const {
  if (n_classes < 2) throw ConfigError("probe.n_classes must be >= 2");
  if (!class_weights.empty()) {
    if (class_weights.size() != n_classes) {
      throw ConfigError("probe.class_weights needs " + std::to_string(n_classes) + " entries");
    }
    for (double w : class_weights)
      if (!(w > 0.0)) throw ConfigError("probe.class_weights must all be > 0");
  }
  if (epochs == 0) throw ConfigError("probe.epochs must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("probe.lr must be >= 0");
  if (batch_size < 2) throw ConfigError("probe.batch_size must be >= 2");
  if (!(weight_decay >= 0.0)) throw ConfigError("probe.weight_decay must be >= 0");
}

LinearClassifier::LinearClassifier(ParameterList params) : params_(std::move(params)) {
  if (params_.size() != 2 || params_[1].value.rows() != 1 || params_[1].value.cols() != params_[0].value.cols()) {
    throw ConfigError("linear classifier needs weight (in x C) and bias (1 x C)");
  }
}

LinearClassifier LinearClassifier::initialize(std::size_t in, std::size_t n_classes, const RandomStream& rng) {
  RandomStream r = rng.substream("init").substream("linear");
  return LinearClassifier({{"weight", init_weight(in, n_classes, in, r), false},
                           {"bias", Matrix(1, n_classes), true}});
}

Matrix LinearClassifier::logits(const Matrix& x) const {
  if (x.cols() != input_dim()) {
    throw ShapeError("linear classifier: input " + x.shape_string() + ", expected width " +
                     std::to_string(input_dim()));
  }
  Matrix out = matmul(x, params_[0].value);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) += params_[1].value(0, c);
  return out;
}

Matrix LinearClassifier::probabilities(const Matrix& x) const {
  Matrix z = logits(x);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto p = softmax(z.row(i));
    std::copy(p.begin(), p.end(), z.row(i).begin());
  }
  return z;
}

namespace {
std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}
}  // namespace

std::vector<std::size_t> LinearClassifier::predict(const Matrix& x) const { return argmax_rows(logits(x)); }

LinearClassifier train_probe(const Matrix& embeddings, std::span<const std::size_t> labels, const ProbeConfig& config,
                             const RandomStream& rng, const StepObserver& observer) {
  config.validate();
  LinearClassifier clf = LinearClassifier::initialize(embeddings.cols(), config.n_classes, rng.substream("probe"));
  RandomStream data_rng = rng.substream("probe").substream("data");
  fit(clf.params(), linear_graph, embeddings, labels, config, data_rng, "probe", observer);
  return clf;
}

FeatureFusionBaseline::FeatureFusionBaseline(std::size_t n_modalities, ParameterList params)
    : n_modalities_(n_modalities), params_(std::move(params)) {
  if (params_.size() != 4) throw ConfigError("feature-fusion MLP needs 4 tensors");
  if (n_modalities_ == 0 || params_[0].value.rows() % n_modalities_ != 0) {
    throw ConfigError("feature-fusion MLP input width is not a multiple of the modality count");
  }
}

FeatureFusionBaseline FeatureFusionBaseline::initialize(std::size_t n_modalities, std::size_t d,
                                                        std::size_t n_classes, const RandomStream& rng) {
  RandomStream r = rng.substream("init").substream("feature_fusion");
  const std::size_t in = n_modalities * d;
  const std::size_t hidden = 2 * d;
  return FeatureFusionBaseline(n_modalities, {{"fc1.weight", init_weight(in, hidden, in, r), false},
                                              {"fc1.bias", Matrix(1, hidden), true},
                                              {"fc2.weight", init_weight(hidden, n_classes, hidden, r), false},
                                              {"fc2.bias", Matrix(1, n_classes), true}});
}

Matrix FeatureFusionBaseline::logits(const Matrix& features) const {
  if (features.cols() != params_[0].value.rows()) {
    throw ShapeError("feature-fusion MLP: input " + features.shape_string() + ", expected width " +
                     std::to_string(params_[0].value.rows()));
  }
  ag::Tape t;
  return mlp_graph(t, adapt::bind(t, params_, false), t.constant(features)).value();
}

std::vector<std::size_t> FeatureFusionBaseline::predict(const Dataset& data,
                                                        const std::vector<Encoder>& encoders) const {
  return argmax_rows(logits(concat_features(data, encoders)));
}

Matrix concat_features(const Dataset& data, const std::vector<Encoder>& encoders) {
  for (const Observation& o : data.observations) {
    if (!o.complete()) {
      throw DataError("baseline requires complete modalities (observation " + o.id + " is missing " +
                      std::to_string(o.modalities.size() - o.available_count()) + ")");
    }
  }
  const std::vector<Matrix> emb = encode_dataset(data, encoders);
  std::size_t width = 0;
  for (const Matrix& e : emb) width += e.cols();
  Matrix out(data.size(), width);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t off = 0;
    for (const Matrix& e : emb) {
      std::copy(e.row(i).begin(), e.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(off));
      off += e.cols();
    }
  }
  return out;
}

FeatureFusionBaseline train_feature_fusion(const Dataset& train, const std::vector<Encoder>& encoders,
                                           const ProbeConfig& config, const RandomStream& rng) {
  config.validate();
  const Matrix x = concat_features(train, encoders);
  FeatureFusionBaseline model =
      FeatureFusionBaseline::initialize(encoders.size(), x.cols() / encoders.size(), config.n_classes,
                                        rng.substream("feature_fusion"));
  RandomStream data_rng = rng.substream("feature_fusion").substream("data");
  fit(model.params(), mlp_graph, x, train.labels(), config, data_rng, "feature_fusion", {});
  return model;
}

std::string to_string(DecisionRule rule) {
  switch (rule) {
    case DecisionRule::Sum:
      return "sum";
    case DecisionRule::Average:
      return "average";
    case DecisionRule::Product:
      return "product";
    case DecisionRule::Maximum:
      return "maximum";
  }
  return "sum";
}

DecisionRule parse_decision_rule(std::string_view name) {
  for (DecisionRule r : kAllDecisionRules)
    if (to_string(r) == name) return r;
  throw ConfigError("unknown decision rule '" + std::string(name) + "' (sum, average, product, maximum)");
}

std::size_t decision_fusion(std::span<const std::vector<double>> posteriors, DecisionRule rule) {
  if (posteriors.empty()) throw DataError("decision_fusion: no posteriors to combine");
  const std::size_t c = posteriors[0].size();
  if (c == 0) throw ShapeError("decision_fusion: empty posterior");
  for (const auto& p : posteriors) {
    if (p.size() != c) throw ShapeError("decision_fusion: posteriors differ in length");
    for (double x : p) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw DataError("decision_fusion: posterior entry " + std::to_string(x));
    }
  }
  std::vector<double> combined = posteriors[0];
  for (std::size_t m = 1; m < posteriors.size(); ++m) {
    for (std::size_t k = 0; k < c; ++k) {
      switch (rule) {
        case DecisionRule::Sum:
        case DecisionRule::Average:
          combined[k] += posteriors[m][k];
          break;
        case DecisionRule::Product:
          combined[k] *= posteriors[m][k];
          break;
        case DecisionRule::Maximum:
          combined[k] = std::max(combined[k], posteriors[m][k]);
          break;
      }
    }
  }
  if (rule == DecisionRule::Average)
    for (double& x : combined) x /= static_cast<double>(posteriors.size());
  return static_cast<std::size_t>(std::max_element(combined.begin(), combined.end()) - combined.begin());
}

DecisionFusionBaseline::DecisionFusionBaseline(std::vector<LinearClassifier> per_modality, DecisionRule rule)
    : per_modality_(std::move(per_modality)), rule_(rule) {
  if (per_modality_.empty()) throw ConfigError("decision fusion needs at least one classifier");
}

std::vector<std::size_t> DecisionFusionBaseline::predict(const std::vector<Matrix>& embeddings,
                                                         const Dataset& data) const {
  if (embeddings.size() != per_modality_.size()) throw ShapeError("decision fusion: modality count mismatch");
  std::vector<Matrix> probs;
  for (std::size_t m = 0; m < embeddings.size(); ++m) probs.push_back(per_modality_[m].probabilities(embeddings[m]));
  std::vector<std::size_t> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<std::vector<double>> posts;
    for (std::size_t m = 0; m < probs.size(); ++m) {
      if (data.observations[i].has(m)) posts.emplace_back(probs[m].row(i).begin(), probs[m].row(i).end());
    }
    if (posts.empty()) throw DataError("decision fusion: observation " + data.observations[i].id + " has no modality");
    out[i] = decision_fusion(posts, rule_);
  }
  return out;
}

std::vector<std::size_t> DecisionFusionBaseline::predict(const Dataset& data,
                                                         const std::vector<Encoder>& encoders) const {
  return predict(encode_dataset(data, encoders), data);
}

DecisionFusionBaseline train_decision_fusion(const Dataset& train, const Dataset& val,
                                             const std::vector<Encoder>& encoders, const ProbeConfig& config,
                                             const RandomStream& rng) {
  config.validate();
  const std::vector<Matrix> emb = encode_dataset(train, encoders);
  const std::vector<std::size_t> labels = train.labels();
  std::vector<LinearClassifier> clfs;
  for (std::size_t m = 0; m < emb.size(); ++m) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train.observations[i].has(m)) rows.push_back(i);
    std::vector<std::size_t> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];
    const RandomStream r = rng.substream("decision_fusion").substream(train.specs[m].name);
    LinearClassifier clf = LinearClassifier::initialize(emb[m].cols(), config.n_classes, r);
    RandomStream data_rng = r.substream("data");
    fit(clf.params(), linear_graph, rows_of(emb[m], rows), y, config, data_rng,
        "decision_fusion." + train.specs[m].name, {});
    clfs.push_back(std::move(clf));
  }
  DecisionFusionBaseline model(std::move(clfs), DecisionRule::Sum);
  const std::vector<Matrix> val_emb = encode_dataset(val, encoders);
  const std::vector<std::size_t> val_labels = val.labels();
  double best = -1.0;
  DecisionRule best_rule = DecisionRule::Sum;
  for (DecisionRule r : kAllDecisionRules) {
    model.set_rule(r);
    const double acc = compute_metrics(model.predict(val_emb, val), val_labels, config.n_classes).acc;
    if (acc > best) {
      best = acc;
      best_rule = r;
    }
  }
  model.set_rule(best_rule);
  return model;
}

}  // namespace adapt
