#pragma once

#include <functional>
#include <span>
#include <vector>

#include "adapt/autograd.hpp"

namespace adapt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

// Builds a scalar (1x1) on the tape from leaves bound to the given parameters.
using ScalarGraph = std::function<ag::Var(ag::Tape&, std::span<const ag::Var>)>;

// Central finite differences with step 1e-5 against the tape's analytic
// gradient. The per-entry error is |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-3), so entries whose gradient is tiny are judged on absolute
// error. Throws DataError when f is not finite at any evaluated point.
GradCheckReport grad_check(const ScalarGraph& f, std::vector<Matrix> params, double tol);

inline constexpr double kFiniteDifferenceStep = 1e-5;

}  // namespace adapt
