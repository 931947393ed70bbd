#pragma once

// Independent reference implementations used as test oracles. They are
// written from the textbook definitions with plain loops and share no code
// with the library beyond the Matrix container.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "adapt/fusion.hpp"
#include "adapt/matrix.hpp"
#include "adapt/random.hpp"

namespace oracle {

using adapt::Matrix;

inline Matrix random_matrix(adapt::RandomStream& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& x : m.storage()) x = scale * rng.normal();
  return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline std::vector<double> naive_softmax(const std::vector<double>& x) {
  double mx = x.empty() ? 0.0 : x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> e(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (e[i] = std::exp(x[i] - mx));
  for (double& v : e) v /= z;
  return e;
}

inline double naive_cosine(const double* u, const double* v, std::size_t n) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return uv / std::sqrt(uu * vv);
}

// -sum_i log( exp(cos(a_i, b_i)/tau) / sum_k exp(cos(a_i, b_k)/tau) )
inline double naive_info_nce(const Matrix& a, const Matrix& b, double tau) {
  double loss = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < b.rows(); ++k) denom += std::exp(naive_cosine(a.row(i).data(), b.row(k).data(), a.cols()) / tau);
    loss -= std::log(std::exp(naive_cosine(a.row(i).data(), b.row(i).data(), a.cols()) / tau) / denom);
  }
  return loss;
}

inline Matrix column_block(const Matrix& m, std::size_t start, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < width; ++j) out(i, j) = m(i, start + j);
  return out;
}

// Unmasked multi-head scaled dot-product attention followed by the output
// projection, for one sequence X (n x d).
inline Matrix textbook_attention(const Matrix& x, const adapt::AttentionWeights& w) {
  const std::size_t h = w.n_heads;
  const std::size_t dk = w.wq.cols() / h;
  const std::size_t dv = w.wv.cols() / h;
  const Matrix q = naive_matmul(x, w.wq), k = naive_matmul(x, w.wk), v = naive_matmul(x, w.wv);
  Matrix heads(x.rows(), h * dv);
  for (std::size_t t = 0; t < h; ++t) {
    const Matrix qt = column_block(q, t * dk, dk), kt = column_block(k, t * dk, dk), vt = column_block(v, t * dv, dv);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      std::vector<double> scores(x.rows());
      for (std::size_t j = 0; j < x.rows(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += qt(i, c) * kt(j, c);
        scores[j] = s / std::sqrt(static_cast<double>(dk));
      }
      const std::vector<double> p = naive_softmax(scores);
      for (std::size_t c = 0; c < dv; ++c) {
        double o = 0.0;
        for (std::size_t j = 0; j < x.rows(); ++j) o += p[j] * vt(j, c);
        heads(i, t * dv + c) = o;
      }
    }
  }
  return naive_matmul(heads, w.wo);
}

inline std::vector<std::size_t> kept_rows(const adapt::BinaryVector& avail) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < avail.size(); ++i)
    if (avail[i]) out.push_back(i);
  return out;
}

inline Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(rows[r], c);
  return out;
}

// Availability over M modalities with at least one present.
inline adapt::BinaryVector random_modality_avail(adapt::RandomStream& rng, std::size_t m) {
  adapt::BinaryVector a(m);
  do {
    for (auto& x : a) x = rng.bernoulli(0.5) ? 1 : 0;
  } while (std::count(a.begin(), a.end(), 1) == 0);
  return a;
}

}  // namespace oracle
