#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "shrinking/autodiff.hpp"

namespace shrinking {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;   // index into the checked parameter list
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor: entries where both gradients are below this are
  /// compared absolutely. Central differences at h = 1e-5 carry roughly
  /// 1e-11 of rounding noise for O(1) losses, so gradients much smaller than
  /// 1e-6 cannot be resolved to 1e-4 relative accuracy.
  double scale_floor = 1e-6;
  /// Test hook: added to every analytic gradient entry before comparison.
  double analytic_bias = 0.0;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Builds a scalar loss on a fresh tape. It must register the checked
/// parameters through Tape::parameter so their gradients can be read back.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients of `loss` w.r.t. every entry of `params`
/// against central differences (f(x+h) - f(x-h)) / 2h. Parameters are
/// perturbed in place and restored.
GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Matrix* const> params,
                                  const GradCheckOptions& options = {});

}  // namespace shrinking
