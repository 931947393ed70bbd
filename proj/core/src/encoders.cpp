#include "adapt/encoders.hpp"

#include <cmath>
#include <string>

#include "adapt/error.hpp"

namespace adapt {

namespace {

constexpr std::size_t kConv1dKernel = 7;
constexpr std::size_t kConv1dStride = 2;
constexpr std::size_t kConv2dKernel = 3;
constexpr std::size_t kConv2dStride = 2;

std::vector<ag::Conv1dShape> conv1d_stack(const ModalitySpec& spec, const ModelConfig& config) {
  std::vector<ag::Conv1dShape> out;
  if (spec.kind != ModalityKind::Sequence1d) return out;
  std::size_t channels = spec.input_shape[0];
  std::size_t length = spec.input_shape[1];
  for (std::size_t c_out : config.conv1d_channels) {
    ag::Conv1dShape s{channels, length, c_out, kConv1dKernel, kConv1dStride, kConv1dKernel / 2};
    if (length + 2 * s.padding < s.kernel) {
      throw ConfigError("modality '" + spec.name + "': sequence too short for the conv stack");
    }
    out.push_back(s);
    channels = c_out;
    length = s.out_length();
  }
  return out;
}

std::vector<ag::Conv2dShape> conv2d_stack(const ModalitySpec& spec, const ModelConfig& config) {
  std::vector<ag::Conv2dShape> out;
  if (spec.kind != ModalityKind::Grid2d) return out;
  std::size_t channels = 1;
  std::size_t h = spec.input_shape[0];
  std::size_t w = spec.input_shape[1];
  for (std::size_t c_out : config.conv2d_channels) {
    ag::Conv2dShape s{channels, h, w, c_out, kConv2dKernel, kConv2dStride, kConv2dKernel / 2};
    if (h + 2 * s.padding < s.kernel || w + 2 * s.padding < s.kernel) {
      throw ConfigError("modality '" + spec.name + "': grid too small for the conv stack");
    }
    out.push_back(s);
    channels = c_out;
    h = s.out_height();
    w = s.out_width();
  }
  return out;
}

std::size_t body_output_dim(const ModalitySpec& spec, const ModelConfig& config) {
  switch (spec.kind) {
    case ModalityKind::FeatureVector:
      return config.mlp_hidden;
    case ModalityKind::Sequence1d:
      return config.conv1d_channels.back();
    case ModalityKind::Grid2d: {
      const auto stack = conv2d_stack(spec, config);
      const auto& last = stack.back();
      return last.out_channels * last.out_height() * last.out_width();
    }
  }
  return 0;
}

}  // namespace

void TransformerConfig::validate() const {
  if (n_heads == 0) throw ConfigError("transformer.n_heads must be >= 1");
  if (n_heads * d_k != d || n_heads * d_v != d) {
    throw ConfigError("transformer: n_heads*d_k and n_heads*d_v must equal d (" + std::to_string(n_heads) +
                      "*" + std::to_string(d_k) + ", " + std::to_string(n_heads) + "*" +
                      std::to_string(d_v) + " vs " + std::to_string(d) + ")");
  }
  if (ffn_multiplier == 0) throw ConfigError("transformer.ffn_multiplier must be >= 1");
}

void ModelConfig::validate() const {
  validate_modalities(modalities);
  if (embed_dim == 0) throw ConfigError("embed_dim must be >= 1");
  if (mlp_hidden == 0) throw ConfigError("mlp_hidden must be >= 1");
  if (conv1d_channels.empty() || conv2d_channels.empty()) throw ConfigError("conv stacks need >= 1 layer");
  transformer.validate();
  if (transformer.d != embed_dim) {
    throw ConfigError("transformer.d (" + std::to_string(transformer.d) + ") must equal embed_dim (" +
                      std::to_string(embed_dim) + ")");
  }
  for (const ModalitySpec& s : modalities) {
    (void)conv1d_stack(s, *this);
    (void)conv2d_stack(s, *this);
  }
}

Matrix init_weight(std::size_t rows, std::size_t cols, std::size_t fan_in, RandomStream& rng) {
  Matrix w(rows, cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : w.storage()) x = s * rng.normal();
  return w;
}

Encoder::Encoder(ModalitySpec spec, ParameterList body, ParameterList head, bool frozen,
                 const ModelConfig& config)
    : spec_(std::move(spec)),
      body_(std::move(body)),
      head_(std::move(head)),
      frozen_(frozen),
      embed_dim_(config.embed_dim),
      conv1d_(conv1d_stack(spec_, config)),
      conv2d_(conv2d_stack(spec_, config)) {
  if (head_.size() != 2) throw ConfigError("encoder head must hold weight and bias");
  const std::size_t expected = spec_.kind == ModalityKind::FeatureVector ? 4
                               : spec_.kind == ModalityKind::Sequence1d  ? 2 * conv1d_.size()
                                                                         : 2 * conv2d_.size();
  if (body_.size() != expected) {
    throw ConfigError("encoder '" + spec_.name + "': expected " + std::to_string(expected) +
                      " body tensors, got " + std::to_string(body_.size()));
  }
  const std::size_t body_out = body_output_dim(spec_, config);
  if (head_[0].value.rows() != body_out || head_[0].value.cols() != embed_dim_) {
    throw ConfigError("encoder '" + spec_.name + "': head weight " + head_[0].value.shape_string() +
                      ", expected " + std::to_string(body_out) + "x" + std::to_string(embed_dim_));
  }
}

ag::Var Encoder::forward(std::span<const ag::Var> body, std::span<const ag::Var> head, ag::Var input) const {
  if (input.cols() != spec_.input_size()) {
    throw ShapeError("encoder '" + spec_.name + "': input has " + std::to_string(input.cols()) +
                     " values per sample, expected " + std::to_string(spec_.input_size()));
  }
  ag::Var h = input;
  switch (spec_.kind) {
    case ModalityKind::FeatureVector:
      h = ag::gelu(ag::add_row(ag::matmul(h, body[0]), body[1]));
      h = ag::gelu(ag::add_row(ag::matmul(h, body[2]), body[3]));
      break;
    case ModalityKind::Sequence1d:
      for (std::size_t l = 0; l < conv1d_.size(); ++l) {
        h = ag::gelu(ag::conv1d(h, body[2 * l], body[2 * l + 1], conv1d_[l]));
      }
      h = ag::channel_mean(h, conv1d_.back().out_channels, conv1d_.back().out_length());
      break;
    case ModalityKind::Grid2d:
      for (std::size_t l = 0; l < conv2d_.size(); ++l) {
        h = ag::gelu(ag::conv2d(h, body[2 * l], body[2 * l + 1], conv2d_[l]));
      }
      break;
  }
  return ag::add_row(ag::matmul(h, head[0]), head[1]);
}

Matrix Encoder::encode_batch(const Matrix& raw) const {
  ag::Tape tape;
  const auto b = adapt::bind(tape, body_, false);
  const auto h = adapt::bind(tape, head_, false);
  return forward(b, h, tape.constant(raw)).value();
}

std::vector<double> Encoder::encode(std::span<const double> raw) const {
  if (raw.size() != spec_.input_size()) {
    throw ShapeError("encoder '" + spec_.name + "': input has " + std::to_string(raw.size()) +
                     " values, expected " + std::to_string(spec_.input_size()));
  }
  const Matrix out = encode_batch(Matrix::row_vector(raw));
  return {out.storage().begin(), out.storage().end()};
}

std::vector<Encoder> build_encoders(const ModelConfig& config, const RandomStream& rng) {
  config.validate();
  std::vector<Encoder> out;
  const RandomStream init = rng.substream("init");
  for (const ModalitySpec& spec : config.modalities) {
    RandomStream r = init.substream("encoder").substream(spec.name);
    ParameterList body;
    switch (spec.kind) {
      case ModalityKind::FeatureVector: {
        const std::size_t in = spec.input_shape[0];
        const std::size_t h = config.mlp_hidden;
        body.push_back({"body.fc1.weight", init_weight(in, h, in, r), false});
        body.push_back({"body.fc1.bias", Matrix(1, h), true});
        body.push_back({"body.fc2.weight", init_weight(h, h, h, r), false});
        body.push_back({"body.fc2.bias", Matrix(1, h), true});
        break;
      }
      case ModalityKind::Sequence1d: {
        std::size_t l = 0;
        for (const auto& s : conv1d_stack(spec, config)) {
          const std::size_t fan_in = s.in_channels * s.kernel;
          body.push_back({"body.conv" + std::to_string(l) + ".weight",
                          init_weight(s.out_channels, fan_in, fan_in, r), false});
          body.push_back({"body.conv" + std::to_string(l) + ".bias", Matrix(1, s.out_channels), true});
          ++l;
        }
        break;
      }
      case ModalityKind::Grid2d: {
        std::size_t l = 0;
        for (const auto& s : conv2d_stack(spec, config)) {
          const std::size_t fan_in = s.in_channels * s.kernel * s.kernel;
          body.push_back({"body.conv" + std::to_string(l) + ".weight",
                          init_weight(s.out_channels, fan_in, fan_in, r), false});
          body.push_back({"body.conv" + std::to_string(l) + ".bias", Matrix(1, s.out_channels), true});
          ++l;
        }
        break;
      }
    }
    const std::size_t body_out = body_output_dim(spec, config);
    ParameterList head{{"head.weight", init_weight(body_out, config.embed_dim, body_out, r), false},
                       {"head.bias", Matrix(1, config.embed_dim), true}};
    out.emplace_back(spec, std::move(body), std::move(head), spec.is_anchor, config);
  }
  return out;
}

}  // namespace adapt
