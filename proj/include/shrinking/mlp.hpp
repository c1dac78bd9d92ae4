#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "shrinking/autodiff.hpp"
#include "shrinking/matrix.hpp"
#include "shrinking/rng.hpp"

namespace shrinking {

enum class OutputActivation { identity, relu };

struct DenseLayer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
};

/// Fully connected network with ReLU on every hidden layer. The last layer
/// uses `output` (identity unless requested otherwise).
struct MlpParams {
  std::vector<DenseLayer> layers;
  OutputActivation output = OutputActivation::identity;

  std::vector<std::size_t> widths() const;
  std::size_t input_width() const;
  std::size_t output_width() const;

  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    for (auto& l : layers) {
      fn(l.weight);
      fn(l.bias);
    }
  }
  template <typename Fn>
  void for_each_parameter(Fn&& fn) const {
    for (const auto& l : layers) {
      fn(l.weight);
      fn(l.bias);
    }
  }
};

/// Uniform Glorot draw of a fan_out x fan_in weight matrix with bound
/// sqrt(6 / (fan_in + fan_out)).
Matrix glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Builds an MLP with the given layer widths (input first). Weights are Glorot
/// initialized and biases start at zero.
MlpParams make_mlp(std::span<const std::size_t> widths, Rng& rng,
                   OutputActivation output = OutputActivation::identity);

/// Single-vector evaluation without recording.
std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> x);

/// Row-batched evaluation on a tape; every row of `x` is one input vector.
Var mlp_apply(Tape& tape, const MlpParams& params, Var x);

}  // namespace shrinking
