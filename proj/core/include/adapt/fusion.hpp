#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adapt/autograd.hpp"
#include "adapt/data.hpp"
#include "adapt/encoders.hpp"
#include "adapt/fusion_config.hpp"
#include "adapt/matrix.hpp"
#include "adapt/optim.hpp"
#include "adapt/random.hpp"
#include "adapt/training.hpp"

namespace adapt {

// Slot 0 is [CLS] and always available; slots 1..M follow modality order.
struct AvailabilityMask {
  BinaryVector avail;

  std::size_t slots() const noexcept { return avail.size(); }
  std::size_t modality_count() const noexcept { return avail.empty() ? 0 : avail.size() - 1; }
  std::size_t available_modalities() const;
  std::uint8_t z(std::size_t i, std::size_t j) const { return avail[i] & avail[j]; }
  // The full S x S outer product, for inspection and tests.
  std::vector<BinaryVector> matrix() const;

  friend bool operator==(const AvailabilityMask&, const AvailabilityMask&) = default;
};

// Throws DataError when no modality is available.
AvailabilityMask build_mask(std::span<const std::uint8_t> modality_avail);
AvailabilityMask mask_of(const Observation& obs);

// Row convention: Q = F * wq. wq, wk are d x (h*d_k), wv is d x (h*d_v),
// wo is (h*d_v) x d. Head t owns column block t of each projection.
struct AttentionWeights {
  Matrix wq;
  Matrix wk;
  Matrix wv;
  Matrix wo;
  std::size_t n_heads = 1;
};

// Masked multi-head self-attention for one stacked sample F (S x d).
Matrix masked_attention(const Matrix& f, const AvailabilityMask& mask, const AttentionWeights& w);
// Per-head attention probabilities (S x S each); unavailable rows are zero.
std::vector<Matrix> attention_probabilities(const Matrix& f, const AvailabilityMask& mask,
                                            const AttentionWeights& w);

class MaskedTransformer {
 public:
  MaskedTransformer(TransformerConfig config, std::size_t n_modalities, ParameterList params);

  static MaskedTransformer initialize(const TransformerConfig& config, std::size_t n_modalities,
                                      const RandomStream& rng);

  const TransformerConfig& config() const noexcept { return config_; }
  std::size_t n_modalities() const noexcept { return n_modalities_; }
  std::size_t slots() const noexcept { return n_modalities_ + 1; }
  const ParameterList& params() const noexcept { return params_; }
  ParameterList& params() noexcept { return params_; }

  // Same weights, with type-embedding rows appended (fresh, from rng) or
  // truncated so the model serves `n_modalities` slots.
  MaskedTransformer with_modalities(std::size_t n_modalities, const RandomStream& rng) const;
  AttentionWeights attention_weights(std::size_t layer) const;

 private:
  TransformerConfig config_;
  std::size_t n_modalities_;
  ParameterList params_;
};

struct TransformerOutput {
  ag::Var cls;    // B x d
  ag::Var slots;  // (B*S) x d
};

// Batched graph. embeddings[m] is B x d; avail[b] has S entries.
TransformerOutput transformer_forward(const MaskedTransformer& model, std::span<const ag::Var> params,
                                      std::span<const ag::Var> embeddings,
                                      const std::vector<BinaryVector>& avail);

// Places the learned [CLS] vector in row 0 and embeddings[m] in row m+1.
// Unavailable rows are zero.
Matrix stack_features(const MaskedTransformer& model, std::span<const std::vector<double>> embeddings,
                      const AvailabilityMask& mask);

struct SingleOutput {
  std::vector<double> cls;
  Matrix slots;
};

// One stacked sample F ((M+1) x d). Type embeddings are added to every row,
// then unavailable rows are zeroed before the first block.
SingleOutput transformer_forward(const MaskedTransformer& model, const Matrix& f, const AvailabilityMask& mask);

// Draws k from {0..M-1} and hides min(k, available-1) available modalities.
AvailabilityMask modality_dropout(const AvailabilityMask& mask, RandomStream& rng);
// Same, with k supplied.
AvailabilityMask modality_dropout(const AvailabilityMask& mask, std::size_t k, RandomStream& rng);

struct ViewConfig {
  double dropout_prob = 0.5;
  double noise_prob = 0.5;
  // Noise std = noise_scale * per-sample, per-channel std of the raw signal.
  double noise_scale = 0.1;

  void validate() const;
};

struct ViewBatch {
  std::vector<Matrix> raw;            // one B x input_size matrix per modality
  std::vector<BinaryVector> avail;    // B entries of S slots
};

struct ViewPair {
  ViewBatch a;
  ViewBatch b;
};

// Two independently augmented views of the observations at `rows`. Noise is
// added to sequence-1d inputs only.
ViewPair make_views(const Dataset& data, std::span<const std::size_t> rows, const ViewConfig& config,
                    RandomStream& rng);

// One-directional InfoNCE between the two views' [CLS] outputs.
double fusion_loss(const Matrix& cls_a, const Matrix& cls_b, double tau);
ag::Var fusion_loss(ag::Var cls_a, ag::Var cls_b, double tau);

struct FusionConfig {
  ViewConfig views;
  double tau_max = 0.2;
  double tau_min = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 12;
  bool freeze_encoders = true;

  void validate() const;
};

// Trains the transformer (and the encoders when unfrozen) on augmented view
// pairs. Missing modalities are allowed; an observation with none is an error.
LossCurve train_fusion(const Dataset& train, std::vector<Encoder>& encoders, MaskedTransformer& model,
                       const FusionConfig& config, const OptimizerConfig& optimizer,
                       const RandomStream& rng, const StepObserver& observer = {});

// Per-modality embeddings for every observation (N x d each, absent rows zero).
std::vector<Matrix> encode_dataset(const Dataset& data, const std::vector<Encoder>& encoders);
// [CLS] outputs for every observation under its own availability (N x d).
Matrix cls_embeddings(const Dataset& data, const std::vector<Encoder>& encoders,
                      const MaskedTransformer& model);

}  // namespace adapt
