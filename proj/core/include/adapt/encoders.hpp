#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adapt/autograd.hpp"
#include "adapt/fusion_config.hpp"
#include "adapt/modality.hpp"
#include "adapt/optim.hpp"
#include "adapt/random.hpp"

namespace adapt {

struct ModelConfig {
  std::vector<ModalitySpec> modalities;
  std::size_t embed_dim = 32;
  // Hidden width of the feature-vector MLP body.
  std::size_t mlp_hidden = 64;
  // Output channels of the 1D conv stack (kernel 7, stride 2).
  std::vector<std::size_t> conv1d_channels{8, 16, 32};
  // Output channels of the 2D conv stack (kernel 3, stride 2), flattened before the head.
  std::vector<std::size_t> conv2d_channels{8, 16};
  // The anchor body is always frozen; its projection head trains when this is set.
  bool train_anchor_head = true;
  TransformerConfig transformer;

  void validate() const;
};

// Modality-specific encoder: a body (MLP / 1D conv / 2D conv) followed by a
// linear projection head to embed_dim.
class Encoder {
 public:
  Encoder(ModalitySpec spec, ParameterList body, ParameterList head, bool frozen,
          const ModelConfig& config);

  const ModalitySpec& spec() const noexcept { return spec_; }
  bool frozen() const noexcept { return frozen_; }
  std::size_t embed_dim() const noexcept { return embed_dim_; }

  ParameterList& body() noexcept { return body_; }
  const ParameterList& body() const noexcept { return body_; }
  ParameterList& head() noexcept { return head_; }
  const ParameterList& head() const noexcept { return head_; }

  // Single input; throws ShapeError naming the modality on a size mismatch.
  std::vector<double> encode(std::span<const double> raw) const;
  // One input per row.
  Matrix encode_batch(const Matrix& raw) const;

  // Graph version over bound parameter leaves (body then head order).
  ag::Var forward(std::span<const ag::Var> body, std::span<const ag::Var> head, ag::Var input) const;

 private:
  ModalitySpec spec_;
  ParameterList body_;
  ParameterList head_;
  bool frozen_;
  std::size_t embed_dim_;
  std::vector<ag::Conv1dShape> conv1d_;
  std::vector<ag::Conv2dShape> conv2d_;
};

// One encoder per modality, in config order. Weights are drawn from the
// "init" sub-stream of rng; the anchor's body is marked frozen.
std::vector<Encoder> build_encoders(const ModelConfig& config, const RandomStream& rng);

// N(0, 1/fan_in) weight of shape rows x cols.
Matrix init_weight(std::size_t rows, std::size_t cols, std::size_t fan_in, RandomStream& rng);

}  // namespace adapt
