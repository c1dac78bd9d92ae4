#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "shrinking/autodiff.hpp"
#include "shrinking/clustering.hpp"
#include "shrinking/mlp.hpp"

namespace shrinking {

/// Hidden-layer widths of the six MLPs inside one unit.
struct UnitHidden {
  std::vector<std::size_t> self_gate;    // f
  std::vector<std::size_t> edge_kernel;  // F
  std::vector<std::size_t> self_kernel;  // W
  std::vector<std::size_t> normalizer;   // M
  std::vector<std::size_t> gate_self;    // f1
  std::vector<std::size_t> gate_up;      // f2

  friend bool operator==(const UnitHidden&, const UnitHidden&) = default;
};

/// Default ShrinkingNet hidden widths: MLPs fed with C-dimensional
/// points use (C+10, C+15, C+20, C+15, C+10), those fed with T-dimensional
/// points use the same offsets from T.
UnitHidden default_hidden(std::size_t in_dim, std::size_t out_dim);

/// Output width of the edge and self kernel generators. Each generated vector
/// is read as a T x C matrix applied to a C-dimensional point.
constexpr std::size_t kernel_width(std::size_t in_dim, std::size_t out_dim) { return in_dim * out_dim; }

/// Magnitude floor of the K-Means-Conv denominator |N_i| * M(beta_i).
inline constexpr double kDenominatorFloor = 1e-6;

/// Learnable tensors of one Shrinking unit mapping N x C to K x T.
struct UnitParams {
  std::size_t in_dim = 0;   // C
  std::size_t out_dim = 0;  // T
  std::size_t k = 0;        // regions

  MlpParams self_gate;    // f:  C -> C
  Matrix lambda;          // 1 x 1 residual scale
  MlpParams edge_kernel;  // F:  C -> T*C
  MlpParams self_kernel;  // W:  C -> T*C
  MlpParams normalizer;   // M:  T -> 1
  Matrix bias;            // b:  1 x T
  MlpParams gate_self;    // f1: T -> T
  MlpParams gate_up;      // f2: T -> T

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    self.self_gate.for_each_parameter(fn);
    fn(self.lambda);
    self.edge_kernel.for_each_parameter(fn);
    self.self_kernel.for_each_parameter(fn);
    self.normalizer.for_each_parameter(fn);
    fn(self.bias);
    self.gate_self.for_each_parameter(fn);
    self.gate_up.for_each_parameter(fn);
  }
  template <typename Fn>
  void for_each_parameter(Fn&& fn) { visit(*this, fn); }
  template <typename Fn>
  void for_each_parameter(Fn&& fn) const { visit(*this, fn); }
};

/// Glorot-initialized unit with lambda = 0 and b = 0. Requires T > C and K >= 1.
UnitParams make_unit(std::size_t in_dim, std::size_t out_dim, std::size_t k, const UnitHidden& hidden,
                     Rng& rng);

/// Throws ConfigError if MLP widths do not chain with (C, T).
void validate_unit(const UnitParams& params);

/// Intermediate clouds of one unit evaluation.
struct UnitTrace {
  Matrix p0;        // N x C, self-correlation output
  ClusterAssignment assignment;
  Matrix up;        // N x T, K-Means-Conv output
  Matrix p1;        // N x T, aggregation output
  std::vector<std::size_t> argmax;  // K x T, winning point per (region, channel)
};

/// Discrete choices that may be pinned for gradient checking or tests.
struct UnitForwardOptions {
  const ClusterAssignment* frozen_assignment = nullptr;
  const std::vector<std::size_t>* frozen_argmax = nullptr;
  LloydOptions lloyd;
};

struct UnitOutput {
  Var pooled;  // K x T
  UnitTrace trace;
};

// Stages. Each records onto the tape of its input.

/// p0_i = p_i + lambda * (softmax(f(p_i)) .* p_i)
Var self_correlation(const UnitParams& params, Var points);

/// Clusters P0 into K regions with K-Means++ and Lloyd iterations.
ClusterAssignment cluster_regions(const Matrix& p0, std::size_t k, Rng& rng, const LloydOptions& options = {});

/// Edge-conditioned convolution within regions (N_i contains i itself):
///   beta_i = sum_j F(p_j - p_i) p_j
///   up_i   = sigmoid(beta_i / clamp(|N_i| M(beta_i)) + W(p_i) p_i + b)
Var kmeans_conv(const UnitParams& params, Var p0, const ClusterAssignment& assignment);

/// Gated blend of the zero-padded P0 and P0_up with per-channel softmax gates
/// computed from the two clouds' average points.
Var aggregate(const UnitParams& params, Var p0, Var up);

/// Channel-wise max per region; row k of the result is region k.
Var maxpool_regions(Var p1, const ClusterAssignment& assignment, std::vector<std::size_t>* argmax,
                    const std::vector<std::size_t>* frozen = nullptr);

/// Full unit: self-correlation, K-Means-Conv, aggregation, max-pool.
UnitOutput unit_forward(const UnitParams& params, Var points, Rng& rng, const UnitForwardOptions& options = {});

}  // namespace shrinking
