#include "shrinking/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace shrinking {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Matrix* const> params,
                                  const GradCheckOptions& options) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
    for (const Matrix* p : params) analytic.push_back(tape.grad_of(*p));
  }
  auto evaluate = [&] {
    Tape tape;
    return loss(tape).value()(0, 0);
  };

  GradCheckReport report;
  const double h = options.step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k]->values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate();
      values[i] = saved - h;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k].values()[i] + options.analytic_bias;
      const double err = relative_error(a, numeric, options.scale_floor);
      ++report.entries_checked;
      if (report.entries_checked == 1 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = k;
        report.worst_entry = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace shrinking
