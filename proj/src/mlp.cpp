#include "shrinking/mlp.hpp"

#include <cmath>
#include <string>

#include "shrinking/errors.hpp"

namespace shrinking {

std::vector<std::size_t> MlpParams::widths() const {
  std::vector<std::size_t> w;
  if (layers.empty()) return w;
  w.push_back(layers.front().weight.cols());
  for (const auto& l : layers) w.push_back(l.weight.rows());
  return w;
}

std::size_t MlpParams::input_width() const {
  return layers.empty() ? 0 : layers.front().weight.cols();
}

std::size_t MlpParams::output_width() const {
  return layers.empty() ? 0 : layers.back().weight.rows();
}

Matrix glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0 || fan_out == 0) {
    throw ConfigError("glorot_init: fan_in and fan_out must be >= 1 (got " + std::to_string(fan_in) +
                      ", " + std::to_string(fan_out) + ")");
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(fan_out, fan_in);
  for (double& v : w.values()) v = dist(rng);
  return w;
}

MlpParams make_mlp(std::span<const std::size_t> widths, Rng& rng, OutputActivation output) {
  if (widths.size() < 2) throw ConfigError("make_mlp: an MLP needs at least input and output widths");
  MlpParams p;
  p.output = output;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    p.layers.push_back(DenseLayer{glorot_init(widths[i], widths[i + 1], rng),
                                  Matrix(1, widths[i + 1], 0.0)});
  }
  return p;
}

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> x) {
  if (x.size() != params.input_width()) {
    throw ConfigError("mlp_forward: input has " + std::to_string(x.size()) + " values, MLP expects " +
                      std::to_string(params.input_width()));
  }
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& layer = params.layers[li];
    std::vector<double> next(layer.weight.rows());
    for (std::size_t o = 0; o < next.size(); ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < cur.size(); ++i) acc += cur[i] * layer.weight(o, i);
      next[o] = acc + layer.bias(0, o);
    }
    const bool last = li + 1 == params.layers.size();
    if (!last || params.output == OutputActivation::relu) {
      for (double& v : next) v = v < 0.0 ? 0.0 : v;
    }
    cur = std::move(next);
  }
  return cur;
}

Var mlp_apply(Tape& tape, const MlpParams& params, Var x) {
  if (x.cols() != params.input_width()) {
    throw ConfigError("mlp_apply: input has " + std::to_string(x.cols()) + " columns, MLP expects " +
                      std::to_string(params.input_width()));
  }
  Var h = x;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& layer = params.layers[li];
    h = ad::linear(h, tape.parameter(layer.weight), tape.parameter(layer.bias));
    const bool last = li + 1 == params.layers.size();
    if (!last || params.output == OutputActivation::relu) h = ad::relu(h);
  }
  return h;
}

}  // namespace shrinking
