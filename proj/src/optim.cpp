#include "shrinking/optim.hpp"

#include <cmath>
#include <string>

#include "shrinking/errors.hpp"

namespace shrinking {

void adam_step(AdamState& state, std::span<Matrix* const> params, std::span<const Matrix> grads,
               const AdamConfig& config) {
  if (params.size() != grads.size()) {
    throw ConfigError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                      std::to_string(grads.size()) + " gradients");
  }
  if (state.step == 0 && state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols(), 0.0);
      state.second_moment.emplace_back(p->rows(), p->cols(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ConfigError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                      " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(grads[k]) || !params[k]->same_shape(state.first_moment[k])) {
      throw ConfigError("adam_step: shape mismatch at parameter " + std::to_string(k) + " (" +
                        shape_string(*params[k]) + " vs grad " + shape_string(grads[k]) + ")");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->values();
    auto g = grads[k].values();
    auto m = state.first_moment[k].values();
    auto v = state.second_moment[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

}  // namespace shrinking
