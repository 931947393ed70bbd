#include "adapt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "adapt/error.hpp"

namespace adapt {
namespace {

double evaluate(const ScalarGraph& f, const std::vector<Matrix>& params) {
  ag::Tape tape;
  std::vector<ag::Var> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(tape.constant(p));
  const ag::Var out = f(tape, leaves);
  const Matrix& v = out.value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("grad_check: f must return 1x1, got " + v.shape_string());
  if (!std::isfinite(v(0, 0))) throw DataError("grad_check: f is not finite");
  return v(0, 0);
}

}  // namespace

GradCheckReport grad_check(const ScalarGraph& f, std::vector<Matrix> params, double tol) {
  std::vector<Matrix> analytic;
  {
    ag::Tape tape;
    std::vector<ag::Var> leaves;
    for (const Matrix& p : params) leaves.push_back(tape.leaf(p, true));
    const ag::Var out = f(tape, leaves);
    if (out.rows() != 1 || out.cols() != 1) {
      throw ShapeError("grad_check: f must return 1x1, got " + out.value().shape_string());
    }
    if (!std::isfinite(out.value()(0, 0))) throw DataError("grad_check: f is not finite");
    tape.backward(out);
    for (ag::Var v : leaves) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  const double h = kFiniteDifferenceStep;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& data = params[p].storage();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double plus = evaluate(f, params);
      data[i] = saved - h;
      const double minus = evaluate(f, params);
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[p].storage()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.entries_checked;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace adapt
