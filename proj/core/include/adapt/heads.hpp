#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adapt/autograd.hpp"
#include "adapt/data.hpp"
#include "adapt/encoders.hpp"
#include "adapt/matrix.hpp"
#include "adapt/optim.hpp"
#include "adapt/random.hpp"
#include "adapt/training.hpp"

namespace adapt {

// -(1/B) * sum_i weights[y_i] * log softmax(logits_i)[y_i].
double weighted_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels,
                              std::span<const double> weights);
ag::Var weighted_cross_entropy(ag::Var logits, std::span<const std::size_t> labels,
                               std::span<const double> weights);

// Inverse class frequency, scaled to mean 1. A class with no sample is
// counted once so its weight stays finite.
std::vector<double> inverse_frequency_weights(std::span<const std::size_t> labels, std::size_t n_classes);

// Shared by the probe and both baselines.
struct ProbeConfig {
  std::size_t n_classes = 2;
  // Empty means inverse_frequency_weights of the training labels.
  std::vector<double> class_weights;
  std::size_t epochs = 30;
  double lr = 1e-2;
  std::size_t batch_size = 64;
  double weight_decay = 1e-3;

  void validate() const;
};

// logits = x * weight + bias.
class LinearClassifier {
 public:
  LinearClassifier() = default;
  explicit LinearClassifier(ParameterList params);
  static LinearClassifier initialize(std::size_t in, std::size_t n_classes, const RandomStream& rng);

  std::size_t input_dim() const { return params_.at(0).value.rows(); }
  std::size_t n_classes() const { return params_.at(0).value.cols(); }
  const ParameterList& params() const noexcept { return params_; }
  ParameterList& params() noexcept { return params_; }

  Matrix logits(const Matrix& x) const;
  Matrix probabilities(const Matrix& x) const;
  std::vector<std::size_t> predict(const Matrix& x) const;

 private:
  ParameterList params_;
};

// Linear probe on [CLS] embeddings. Throws DataError when the labels hold a
// single class.
LinearClassifier train_probe(const Matrix& embeddings, std::span<const std::size_t> labels,
                             const ProbeConfig& config, const RandomStream& rng,
                             const StepObserver& observer = {});

// Concatenated modality embeddings -> GELU hidden layer (2*d) -> logits.
class FeatureFusionBaseline {
 public:
  FeatureFusionBaseline() = default;
  FeatureFusionBaseline(std::size_t n_modalities, ParameterList params);
  static FeatureFusionBaseline initialize(std::size_t n_modalities, std::size_t d, std::size_t n_classes,
                                          const RandomStream& rng);

  std::size_t n_modalities() const noexcept { return n_modalities_; }
  const ParameterList& params() const noexcept { return params_; }
  ParameterList& params() noexcept { return params_; }

  // Throws DataError naming the first incomplete observation.
  std::vector<std::size_t> predict(const Dataset& data, const std::vector<Encoder>& encoders) const;
  Matrix logits(const Matrix& features) const;

 private:
  std::size_t n_modalities_ = 0;
  ParameterList params_;
};

// Per-modality embeddings side by side (N x M*d). Throws DataError when any
// observation misses a modality.
Matrix concat_features(const Dataset& data, const std::vector<Encoder>& encoders);

FeatureFusionBaseline train_feature_fusion(const Dataset& train, const std::vector<Encoder>& encoders,
                                           const ProbeConfig& config, const RandomStream& rng);

enum class DecisionRule { Sum, Average, Product, Maximum };

inline constexpr DecisionRule kAllDecisionRules[] = {DecisionRule::Sum, DecisionRule::Average,
                                                     DecisionRule::Product, DecisionRule::Maximum};

std::string to_string(DecisionRule rule);
DecisionRule parse_decision_rule(std::string_view name);

// Combines per-modality posteriors element-wise and returns the argmax.
// Throws on an empty list, ragged lengths, or a negative or non-finite entry.
std::size_t decision_fusion(std::span<const std::vector<double>> posteriors, DecisionRule rule);

// One logistic classifier per modality over its embedding. Prediction
// combines the modalities an observation actually carries.
class DecisionFusionBaseline {
 public:
  DecisionFusionBaseline() = default;
  DecisionFusionBaseline(std::vector<LinearClassifier> per_modality, DecisionRule rule);

  DecisionRule rule() const noexcept { return rule_; }
  void set_rule(DecisionRule rule) noexcept { rule_ = rule; }
  const std::vector<LinearClassifier>& classifiers() const noexcept { return per_modality_; }

  std::vector<std::size_t> predict(const Dataset& data, const std::vector<Encoder>& encoders) const;
  std::vector<std::size_t> predict(const std::vector<Matrix>& embeddings, const Dataset& data) const;

 private:
  std::vector<LinearClassifier> per_modality_;
  DecisionRule rule_ = DecisionRule::Sum;
};

// Trains the per-modality classifiers on train, then keeps the rule with the
// best balanced accuracy on val (ties go to the earlier rule).
DecisionFusionBaseline train_decision_fusion(const Dataset& train, const Dataset& val,
                                             const std::vector<Encoder>& encoders, const ProbeConfig& config,
                                             const RandomStream& rng);

}  // namespace adapt
