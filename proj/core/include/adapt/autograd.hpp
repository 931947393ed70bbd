#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "adapt/matrix.hpp"

// Minimal reverse-mode differentiation over dense matrices. Covers exactly the
// operations the encoders, the masked transformer and the losses compose; it
// is not a general autodiff framework.
namespace adapt::ag {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  // Receives the gradient flowing into the node and accumulates into parents.
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  // Records an op result. The backward closure is kept only when at least one
  // parent requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, std::span<const Var> parents, Backward backward);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient of the last backward() root with respect to v (zeros when v was
  // not reached).
  Matrix grad(Var v) const;
  // Zero-initialized on first use; only valid for nodes that require grad.
  Matrix& grad_accumulator(Var v);

  void backward(Var root);
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

struct Conv1dShape {
  std::size_t in_channels = 1;
  std::size_t length = 0;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_length() const { return (length + 2 * padding - kernel) / stride + 1; }
};

struct Conv2dShape {
  std::size_t in_channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var hadamard(Var a, Var b);
Var sum(Var a);
Var gelu(Var a);
// Row-wise normalization with affine gamma/beta (1 x cols each).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Divides every row by its L2 norm; throws DataError on a zero row.
Var l2_normalize_rows(Var a);
// sum_i weight_i * (-log softmax(logits_i)[target_i]) / normalizer, as a 1x1.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets,
                          std::span<const double> row_weights, double normalizer);
// Multiplies row r by keep[r] (0 or 1).
Var mask_rows(Var a, std::span<const std::uint8_t> keep);
Var select_rows(Var a, std::span<const std::size_t> rows);
Var concat_cols(std::span<const Var> parts);

// Batched multi-head attention core. q, k, v hold B stacked sequences of
// length S = avail[b].size() (rows b*S .. b*S+S-1). For each sample and head,
// row i attends to column j iff avail[i] && avail[j]; a row with no admissible
// column outputs zeros. Heads split the columns of q/k (d_k each) and v (d_v
// each). Output is (B*S) x (n_heads*d_v).
Var masked_attention_core(Var q, Var k, Var v, const std::vector<BinaryVector>& avail,
                          std::size_t n_heads);

// x: B x (in_channels*length); w: out_channels x (in_channels*kernel); b: 1 x out_channels.
Var conv1d(Var x, Var w, Var b, const Conv1dShape& shape);
// x: B x (in_channels*height*width); w: out_channels x (in_channels*kernel*kernel).
Var conv2d(Var x, Var w, Var b, const Conv2dShape& shape);
// Global average over the trailing `length` positions of each channel.
Var channel_mean(Var x, std::size_t channels, std::size_t length);

// Builds the stacked token matrix for a batch: row b*S + 0 is cls + type[0];
// row b*S + m is (modalities[m-1][b] + type[m]) when avail[b][m], else 0.
Var assemble_tokens(Var cls, Var type_embedding, std::span<const Var> modalities,
                    const std::vector<BinaryVector>& avail);

double gelu_value(double x);

}  // namespace adapt::ag
