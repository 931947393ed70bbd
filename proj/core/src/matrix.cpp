#include "adapt/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adapt/error.hpp"

namespace adapt {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + a.shape_string() + " * " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("add: " + a.shape_string() + " vs " + b.shape_string());
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.storage()[i] += b.storage()[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("sub: " + a.shape_string() + " vs " + b.shape_string());
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.storage()[i] -= b.storage()[i];
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& x : out.storage()) x *= s;
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.storage()[i] - b.storage()[i]));
  return m;
}

std::vector<double> masked_softmax(std::span<const double> scores,
                                   std::span<const std::uint8_t> mask) {
  if (scores.size() != mask.size()) {
    throw ShapeError("masked_softmax: scores length " + std::to_string(scores.size()) +
                     " != mask length " + std::to_string(mask.size()));
  }
  std::vector<double> out(scores.size(), 0.0);
  double max_score = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (mask[j]) {
      max_score = std::max(max_score, scores[j]);
      any = true;
    }
  }
  if (!any) return out;
  double denom = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (mask[j]) {
      out[j] = std::exp(scores[j] - max_score);
      denom += out[j];
    }
  }
  for (double& x : out) x /= denom;
  return out;
}

std::vector<double> softmax(std::span<const double> scores) {
  const BinaryVector ones(scores.size(), 1);
  return masked_softmax(scores, ones);
}

double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ShapeError("dot: length " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double l2_norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

double cosine(std::span<const double> u, std::span<const double> v) {
  const double uv = dot(u, v);
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) throw DataError("cosine: zero-norm input");
  return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

}  // namespace adapt
