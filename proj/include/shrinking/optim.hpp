#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shrinking/matrix.hpp"

namespace shrinking {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, one per parameter matrix, aligned with
/// the parameter order handed to adam_step.
struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update. Moments are created on the first call.
void adam_step(AdamState& state, std::span<Matrix* const> params, std::span<const Matrix> grads,
               const AdamConfig& config);

}  // namespace shrinking
