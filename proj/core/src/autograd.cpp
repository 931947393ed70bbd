#include "adapt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "adapt/error.hpp"

namespace adapt::ag {
namespace {

// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto ar = a.row(k);
    const auto br = b.row(k);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* orow = out.row(i).data();
      for (std::size_t j = 0; j < br.size(); ++j) orow[j] += aki * br[j];
    }
  }
  return out;
}

void accumulate(Matrix& dst, const Matrix& src) {
  auto& d = dst.storage();
  const auto& s = src.storage();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::logic_error("ag: vars from different tapes");
}

void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
  nodes_.push_back(Node{std::move(value), Matrix{}, needs, needs ? std::move(backward) : Backward{}});
  return Var{this, nodes_.size() - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty() && !n.value.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix& Tape::grad_accumulator(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() != n.value.size() || n.grad.rows() != n.value.rows()) {
    n.grad = Matrix(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::logic_error("Tape::backward: foreign var");
  const Matrix& rv = nodes_[root.id].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ShapeError("Tape::backward: root must be 1x1, got " + rv.shape_string());
  }
  for (Node& n : nodes_) n.grad = Matrix{};
  if (!nodes_[root.id].requires_grad) return;
  grad_accumulator(root)(0, 0) = 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  Matrix out = adapt::matmul(a.value(), b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) accumulate(t.grad_accumulator(a), matmul_nt(g, t.value(b)));
    if (t.requires_grad(b)) accumulate(t.grad_accumulator(b), matmul_tn(t.value(a), g));
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.record(adapt::transpose(a.value()), {a}, [a](Tape& t, const Matrix& g) {
    accumulate(t.grad_accumulator(a), adapt::transpose(g));
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.value().same_shape(b.value()), "add", a.value(), b.value());
  Tape& t = *a.tape;
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) accumulate(t.grad_accumulator(a), g);
    if (t.requires_grad(b)) accumulate(t.grad_accumulator(b), g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.value().same_shape(b.value()), "sub", a.value(), b.value());
  Tape& t = *a.tape;
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) accumulate(t.grad_accumulator(a), g);
    if (t.requires_grad(b)) accumulate(t.grad_accumulator(b), -1.0 * g);
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  require_shape(rv.rows() == 1 && rv.cols() == av.cols(), "add_row", av, rv);
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv(0, j);
  }
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) accumulate(t.grad_accumulator(a), g);
    if (t.requires_grad(row)) {
      Matrix& gr = t.grad_accumulator(row);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
    }
  });
}

Var scale(Var a, double s) {
  return a.tape->record(s * a.value(), {a}, [a, s](Tape& t, const Matrix& g) {
    accumulate(t.grad_accumulator(a), s * g);
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.value().same_shape(b.value()), "hadamard", a.value(), b.value());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.storage()[i] *= b.value().storage()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const auto& av = t.value(a).storage();
    const auto& bv = t.value(b).storage();
    if (t.requires_grad(a)) {
      auto& ga = t.grad_accumulator(a).storage();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g.storage()[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_accumulator(b).storage();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g.storage()[i] * av[i];
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().storage()) s += x;
  return a.tape->record(Matrix(1, 1, s), {a}, [a](Tape& t, const Matrix& g) {
    for (double& x : t.grad_accumulator(a).storage()) x += g(0, 0);
  });
}

Var gelu(Var a) {
  Matrix out = a.value();
  for (double& x : out.storage()) x = gelu_value(x);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    const auto& x = t.value(a).storage();
    auto& ga = t.grad_accumulator(a).storage();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += g.storage()[i] * (cdf + x[i] * pdf);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = x.value();
  const std::size_t n = xv.cols();
  require_shape(gamma.value().rows() == 1 && gamma.value().cols() == n, "layer_norm", xv, gamma.value());
  require_shape(beta.value().rows() == 1 && beta.value().cols() == n, "layer_norm", xv, beta.value());
  Matrix normalized(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  Matrix out(xv.rows(), n);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const auto r = xv.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normalized(i, j) = (r[j] - mean) * inv_std[i];
      out(i, j) = gamma.value()(0, j) * normalized(i, j) + beta.value()(0, j);
    }
  }
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          Tape& t, const Matrix& g) {
        const std::size_t n = normalized.cols();
        const Matrix& gv = t.value(gamma);
        if (t.requires_grad(gamma)) {
          Matrix& gg = t.grad_accumulator(gamma);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < n; ++j) gg(0, j) += g(i, j) * normalized(i, j);
        }
        if (t.requires_grad(beta)) {
          Matrix& gb = t.grad_accumulator(beta);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < n; ++j) gb(0, j) += g(i, j);
        }
        if (t.requires_grad(x)) {
          Matrix& gx = t.grad_accumulator(x);
          std::vector<double> dxhat(n);
          for (std::size_t i = 0; i < g.rows(); ++i) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = g(i, j) * gv(0, j);
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * normalized(i, j);
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx(i, j) += inv_std[i] * (dxhat[j] - mean_d - normalized(i, j) * mean_dx);
            }
          }
        }
      });
}

Var l2_normalize_rows(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  std::vector<double> norms(av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    norms[i] = l2_norm(av.row(i));
    if (norms[i] == 0.0) throw DataError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j) / norms[i];
  }
  const Matrix cached = out;
  return a.tape->record(std::move(out), {a},
                        [a, y = cached, norms = std::move(norms)](Tape& t, const Matrix& g) {
                          Matrix& ga = t.grad_accumulator(a);
                          for (std::size_t i = 0; i < y.rows(); ++i) {
                            const double proj = dot(y.row(i), g.row(i));
                            for (std::size_t j = 0; j < y.cols(); ++j) {
                              ga(i, j) += (g(i, j) - y(i, j) * proj) / norms[i];
                            }
                          }
                        });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets,
                          std::span<const double> row_weights, double normalizer) {
  const Matrix& lv = logits.value();
  if (targets.size() != lv.rows() || row_weights.size() != lv.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(row_weights.size()) + " weights for " + lv.shape_string() +
                     " logits");
  }
  Matrix probs(lv.rows(), lv.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    if (targets[i] >= lv.cols()) throw DataError("softmax_cross_entropy: target out of range");
    const auto r = lv.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double denom = 0.0;
    for (double v : r) denom += std::exp(v - m);
    const double log_denom = std::log(denom) + m;
    for (std::size_t j = 0; j < r.size(); ++j) probs(i, j) = std::exp(r[j] - log_denom);
    total += row_weights[i] * (log_denom - r[targets[i]]);
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  std::vector<double> w(row_weights.begin(), row_weights.end());
  return logits.tape->record(
      Matrix(1, 1, total / normalizer), {logits},
      [logits, probs = std::move(probs), tg = std::move(tg), w = std::move(w), normalizer](
          Tape& t, const Matrix& g) {
        Matrix& gl = t.grad_accumulator(logits);
        for (std::size_t i = 0; i < probs.rows(); ++i) {
          const double s = g(0, 0) * w[i] / normalizer;
          for (std::size_t j = 0; j < probs.cols(); ++j) {
            gl(i, j) += s * (probs(i, j) - (j == tg[i] ? 1.0 : 0.0));
          }
        }
      });
}

Var mask_rows(Var a, std::span<const std::uint8_t> keep) {
  const Matrix& av = a.value();
  if (keep.size() != av.rows()) throw ShapeError("mask_rows: mask length vs " + av.shape_string());
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    if (!keep[i]) std::fill(out.row(i).begin(), out.row(i).end(), 0.0);
  BinaryVector k(keep.begin(), keep.end());
  return a.tape->record(std::move(out), {a}, [a, k = std::move(k)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_accumulator(a);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      if (!k[i]) continue;
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j);
    }
  });
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
  const Matrix& av = a.value();
  Matrix out(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw ShapeError("select_rows: row index out of range");
    std::copy(av.row(rows[i]).begin(), av.row(rows[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape->record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_accumulator(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(idx[i], j) += g(i, j);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    offsets.push_back(cols);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& pv = parts[k].value();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(pv.row(i).begin(), pv.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(offsets[k]));
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts.front().tape->record(
      std::move(out), parts, [ps, offsets = std::move(offsets)](Tape& t, const Matrix& g) {
        for (std::size_t k = 0; k < ps.size(); ++k) {
          if (!t.requires_grad(ps[k])) continue;
          Matrix& gp = t.grad_accumulator(ps[k]);
          for (std::size_t i = 0; i < gp.rows(); ++i)
            for (std::size_t j = 0; j < gp.cols(); ++j) gp(i, j) += g(i, offsets[k] + j);
        }
      });
}

Var masked_attention_core(Var q, Var k, Var v, const std::vector<BinaryVector>& avail,
                          std::size_t n_heads) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  if (avail.empty()) throw ShapeError("masked_attention_core: empty batch");
  const std::size_t seq = avail.front().size();
  const std::size_t batch = avail.size();
  for (const auto& a : avail)
    if (a.size() != seq) throw ShapeError("masked_attention_core: ragged availability");
  if (qv.rows() != batch * seq || kv.rows() != batch * seq || vv.rows() != batch * seq) {
    throw ShapeError("masked_attention_core: expected " + std::to_string(batch * seq) +
                     " rows, got q " + qv.shape_string() + ", k " + kv.shape_string() + ", v " +
                     vv.shape_string());
  }
  if (n_heads == 0 || qv.cols() % n_heads != 0 || vv.cols() % n_heads != 0 || kv.cols() != qv.cols()) {
    throw ShapeError("masked_attention_core: head split incompatible with q " + qv.shape_string() +
                     ", v " + vv.shape_string());
  }
  const std::size_t dk = qv.cols() / n_heads;
  const std::size_t dv = vv.cols() / n_heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  // probs[(b*n_heads + h)] is S x S.
  std::vector<Matrix> probs(batch * n_heads, Matrix(seq, seq));
  Matrix out(batch * seq, n_heads * dv);
  std::vector<double> scores(seq);
  BinaryVector mask(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * seq;
    for (std::size_t h = 0; h < n_heads; ++h) {
      Matrix& p = probs[b * n_heads + h];
      for (std::size_t i = 0; i < seq; ++i) {
        for (std::size_t j = 0; j < seq; ++j) {
          mask[j] = static_cast<std::uint8_t>(avail[b][i] && avail[b][j]);
          double s = 0.0;
          if (mask[j]) {
            for (std::size_t c = 0; c < dk; ++c) s += qv(base + i, h * dk + c) * kv(base + j, h * dk + c);
          }
          scores[j] = s * inv_sqrt_dk;
        }
        const auto w = masked_softmax(scores, mask);
        for (std::size_t j = 0; j < seq; ++j) {
          p(i, j) = w[j];
          if (w[j] == 0.0) continue;
          for (std::size_t c = 0; c < dv; ++c) out(base + i, h * dv + c) += w[j] * vv(base + j, h * dv + c);
        }
      }
    }
  }

  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), batch, seq, n_heads, dk, dv, inv_sqrt_dk](
          Tape& t, const Matrix& g) {
        const Matrix& qv = t.value(q);
        const Matrix& kv = t.value(k);
        const Matrix& vv = t.value(v);
        Matrix* gq = t.requires_grad(q) ? &t.grad_accumulator(q) : nullptr;
        Matrix* gk = t.requires_grad(k) ? &t.grad_accumulator(k) : nullptr;
        Matrix* gv = t.requires_grad(v) ? &t.grad_accumulator(v) : nullptr;
        Matrix dp(seq, seq);
        Matrix ds(seq, seq);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = b * seq;
          for (std::size_t h = 0; h < n_heads; ++h) {
            const Matrix& p = probs[b * n_heads + h];
            for (std::size_t i = 0; i < seq; ++i) {
              for (std::size_t j = 0; j < seq; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dv; ++c) s += g(base + i, h * dv + c) * vv(base + j, h * dv + c);
                dp(i, j) = s;
              }
            }
            for (std::size_t i = 0; i < seq; ++i) {
              double row_dot = 0.0;
              for (std::size_t j = 0; j < seq; ++j) row_dot += p(i, j) * dp(i, j);
              for (std::size_t j = 0; j < seq; ++j) ds(i, j) = p(i, j) * (dp(i, j) - row_dot) * inv_sqrt_dk;
            }
            if (gv) {
              for (std::size_t i = 0; i < seq; ++i)
                for (std::size_t j = 0; j < seq; ++j) {
                  const double pij = p(i, j);
                  if (pij == 0.0) continue;
                  for (std::size_t c = 0; c < dv; ++c) (*gv)(base + j, h * dv + c) += pij * g(base + i, h * dv + c);
                }
            }
            for (std::size_t i = 0; i < seq; ++i)
              for (std::size_t j = 0; j < seq; ++j) {
                const double sij = ds(i, j);
                if (sij == 0.0) continue;
                for (std::size_t c = 0; c < dk; ++c) {
                  if (gq) (*gq)(base + i, h * dk + c) += sij * kv(base + j, h * dk + c);
                  if (gk) (*gk)(base + j, h * dk + c) += sij * qv(base + i, h * dk + c);
                }
              }
          }
        }
      });
}

Var conv1d(Var x, Var w, Var b, const Conv1dShape& s) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  if (xv.cols() != s.in_channels * s.length) {
    throw ShapeError("conv1d: input " + xv.shape_string() + " vs " + std::to_string(s.in_channels) +
                     "x" + std::to_string(s.length));
  }
  if (wv.rows() != s.out_channels || wv.cols() != s.in_channels * s.kernel || bv.cols() != s.out_channels) {
    throw ShapeError("conv1d: weight " + wv.shape_string() + " / bias " + bv.shape_string());
  }
  if (s.length + 2 * s.padding < s.kernel) throw ShapeError("conv1d: kernel larger than padded input");
  const std::size_t lout = s.out_length();
  Matrix out(xv.rows(), s.out_channels * lout);
  for (std::size_t n = 0; n < xv.rows(); ++n) {
    const double* xr = xv.row(n).data();
    double* yr = out.row(n).data();
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      const double* wr = wv.row(o).data();
      for (std::size_t t = 0; t < lout; ++t) {
        double acc = bv(0, o);
        const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
        for (std::size_t c = 0; c < s.in_channels; ++c) {
          const double* xc = xr + c * s.length;
          const double* wc = wr + c * s.kernel;
          for (std::size_t kk = 0; kk < s.kernel; ++kk) {
            const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(kk);
            if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(s.length)) continue;
            acc += wc[kk] * xc[pos];
          }
        }
        yr[o * lout + t] = acc;
      }
    }
  }
  return x.tape->record(std::move(out), {x, w, b}, [x, w, b, s, lout](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(x);
    const Matrix& wv = t.value(w);
    Matrix* gx = t.requires_grad(x) ? &t.grad_accumulator(x) : nullptr;
    Matrix* gw = t.requires_grad(w) ? &t.grad_accumulator(w) : nullptr;
    Matrix* gb = t.requires_grad(b) ? &t.grad_accumulator(b) : nullptr;
    for (std::size_t n = 0; n < xv.rows(); ++n) {
      const double* xr = xv.row(n).data();
      const double* gr = g.row(n).data();
      for (std::size_t o = 0; o < s.out_channels; ++o) {
        const double* wr = wv.row(o).data();
        for (std::size_t tt = 0; tt < lout; ++tt) {
          const double go = gr[o * lout + tt];
          if (go == 0.0) continue;
          if (gb) (*gb)(0, o) += go;
          const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(tt * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
          for (std::size_t c = 0; c < s.in_channels; ++c) {
            for (std::size_t kk = 0; kk < s.kernel; ++kk) {
              const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(kk);
              if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(s.length)) continue;
              if (gw) (*gw)(o, c * s.kernel + kk) += go * xr[c * s.length + static_cast<std::size_t>(pos)];
              if (gx) (*gx)(n, c * s.length + static_cast<std::size_t>(pos)) += go * wr[c * s.kernel + kk];
            }
          }
        }
      }
    }
  });
}

Var conv2d(Var x, Var w, Var b, const Conv2dShape& s) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  if (xv.cols() != s.in_channels * s.height * s.width) {
    throw ShapeError("conv2d: input " + xv.shape_string() + " vs " + std::to_string(s.in_channels) +
                     "x" + std::to_string(s.height) + "x" + std::to_string(s.width));
  }
  const std::size_t kk2 = s.kernel * s.kernel;
  if (wv.rows() != s.out_channels || wv.cols() != s.in_channels * kk2 || bv.cols() != s.out_channels) {
    throw ShapeError("conv2d: weight " + wv.shape_string() + " / bias " + bv.shape_string());
  }
  if (s.height + 2 * s.padding < s.kernel || s.width + 2 * s.padding < s.kernel) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const std::size_t ho = s.out_height();
  const std::size_t wo = s.out_width();
  const auto in_bounds = [&s](std::ptrdiff_t r, std::ptrdiff_t c) {
    return r >= 0 && c >= 0 && r < static_cast<std::ptrdiff_t>(s.height) &&
           c < static_cast<std::ptrdiff_t>(s.width);
  };
  Matrix out(xv.rows(), s.out_channels * ho * wo);
  for (std::size_t n = 0; n < xv.rows(); ++n) {
    const double* xr = xv.row(n).data();
    double* yr = out.row(n).data();
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      const double* wr = wv.row(o).data();
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = bv(0, o);
          const std::ptrdiff_t r0 = static_cast<std::ptrdiff_t>(i * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
          const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(j * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
          for (std::size_t c = 0; c < s.in_channels; ++c) {
            const double* xc = xr + c * s.height * s.width;
            const double* wc = wr + c * kk2;
            for (std::size_t a = 0; a < s.kernel; ++a) {
              for (std::size_t bb = 0; bb < s.kernel; ++bb) {
                const std::ptrdiff_t r = r0 + static_cast<std::ptrdiff_t>(a);
                const std::ptrdiff_t cc = c0 + static_cast<std::ptrdiff_t>(bb);
                if (!in_bounds(r, cc)) continue;
                acc += wc[a * s.kernel + bb] * xc[static_cast<std::size_t>(r) * s.width + static_cast<std::size_t>(cc)];
              }
            }
          }
          yr[(o * ho + i) * wo + j] = acc;
        }
      }
    }
  }
  return x.tape->record(std::move(out), {x, w, b}, [x, w, b, s, ho, wo, kk2, in_bounds](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(x);
    const Matrix& wv = t.value(w);
    Matrix* gx = t.requires_grad(x) ? &t.grad_accumulator(x) : nullptr;
    Matrix* gw = t.requires_grad(w) ? &t.grad_accumulator(w) : nullptr;
    Matrix* gb = t.requires_grad(b) ? &t.grad_accumulator(b) : nullptr;
    for (std::size_t n = 0; n < xv.rows(); ++n) {
      const double* xr = xv.row(n).data();
      const double* gr = g.row(n).data();
      for (std::size_t o = 0; o < s.out_channels; ++o) {
        const double* wr = wv.row(o).data();
        for (std::size_t i = 0; i < ho; ++i) {
          for (std::size_t j = 0; j < wo; ++j) {
            const double go = gr[(o * ho + i) * wo + j];
            if (go == 0.0) continue;
            if (gb) (*gb)(0, o) += go;
            const std::ptrdiff_t r0 = static_cast<std::ptrdiff_t>(i * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
            const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(j * s.stride) - static_cast<std::ptrdiff_t>(s.padding);
            for (std::size_t c = 0; c < s.in_channels; ++c) {
              for (std::size_t a = 0; a < s.kernel; ++a) {
                for (std::size_t bb = 0; bb < s.kernel; ++bb) {
                  const std::ptrdiff_t r = r0 + static_cast<std::ptrdiff_t>(a);
                  const std::ptrdiff_t cc = c0 + static_cast<std::ptrdiff_t>(bb);
                  if (!in_bounds(r, cc)) continue;
                  const std::size_t xi = c * s.height * s.width + static_cast<std::size_t>(r) * s.width + static_cast<std::size_t>(cc);
                  const std::size_t wi = c * kk2 + a * s.kernel + bb;
                  if (gw) (*gw)(o, wi) += go * xr[xi];
                  if (gx) (*gx)(n, xi) += go * wr[wi];
                }
              }
            }
          }
        }
      }
    }
  });
}

Var channel_mean(Var x, std::size_t channels, std::size_t length) {
  const Matrix& xv = x.value();
  if (xv.cols() != channels * length || length == 0) {
    throw ShapeError("channel_mean: " + xv.shape_string() + " vs " + std::to_string(channels) + "x" +
                     std::to_string(length));
  }
  Matrix out(xv.rows(), channels);
  const double inv = 1.0 / static_cast<double>(length);
  for (std::size_t n = 0; n < xv.rows(); ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < length; ++t) s += xv(n, c * length + t);
      out(n, c) = s * inv;
    }
  return x.tape->record(std::move(out), {x}, [x, channels, length, inv](Tape& t, const Matrix& g) {
    Matrix& gx = t.grad_accumulator(x);
    for (std::size_t n = 0; n < g.rows(); ++n)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t tt = 0; tt < length; ++tt) gx(n, c * length + tt) += g(n, c) * inv;
  });
}

Var assemble_tokens(Var cls, Var type_embedding, std::span<const Var> modalities,
                    const std::vector<BinaryVector>& avail) {
  const Matrix& cv = cls.value();
  const Matrix& tv = type_embedding.value();
  const std::size_t d = cv.cols();
  const std::size_t seq = modalities.size() + 1;
  const std::size_t batch = avail.size();
  if (cv.rows() != 1 || tv.rows() < seq || tv.cols() != d) {
    throw ShapeError("assemble_tokens: cls " + cv.shape_string() + ", type embedding " +
                     tv.shape_string() + " for " + std::to_string(seq) + " slots");
  }
  for (Var m : modalities) {
    if (m.rows() != batch || m.cols() != d) {
      throw ShapeError("assemble_tokens: modality block " + m.value().shape_string() + ", expected " +
                       std::to_string(batch) + "x" + std::to_string(d));
    }
  }
  for (const auto& a : avail)
    if (a.size() != seq) throw ShapeError("assemble_tokens: availability length mismatch");
  Matrix out(batch * seq, d);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < d; ++j) out(b * seq, j) = cv(0, j) + tv(0, j);
    for (std::size_t m = 1; m < seq; ++m) {
      if (!avail[b][m]) continue;
      const Matrix& mv = modalities[m - 1].value();
      for (std::size_t j = 0; j < d; ++j) out(b * seq + m, j) = mv(b, j) + tv(m, j);
    }
  }
  std::vector<Var> parents{cls, type_embedding};
  parents.insert(parents.end(), modalities.begin(), modalities.end());
  std::vector<Var> mods(modalities.begin(), modalities.end());
  return cls.tape->record(
      std::move(out), parents,
      [cls, type_embedding, mods = std::move(mods), avail, seq, d](Tape& t, const Matrix& g) {
        const std::size_t batch = avail.size();
        if (t.requires_grad(cls)) {
          Matrix& gc = t.grad_accumulator(cls);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < d; ++j) gc(0, j) += g(b * seq, j);
        }
        if (t.requires_grad(type_embedding)) {
          Matrix& gt = t.grad_accumulator(type_embedding);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t m = 0; m < seq; ++m) {
              if (m > 0 && !avail[b][m]) continue;
              for (std::size_t j = 0; j < d; ++j) gt(m, j) += g(b * seq + m, j);
            }
        }
        for (std::size_t m = 1; m < seq; ++m) {
          if (!t.requires_grad(mods[m - 1])) continue;
          Matrix& gm = t.grad_accumulator(mods[m - 1]);
          for (std::size_t b = 0; b < batch; ++b) {
            if (!avail[b][m]) continue;
            for (std::size_t j = 0; j < d; ++j) gm(b, j) += g(b * seq + m, j);
          }
        }
      });
}

}  // namespace adapt::ag
