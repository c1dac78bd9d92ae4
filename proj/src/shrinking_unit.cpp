#include "shrinking/shrinking_unit.hpp"

#include <string>

#include "shrinking/errors.hpp"

namespace shrinking {
namespace {

std::vector<std::size_t> offsets_from(std::size_t base) {
  return {base + 10, base + 15, base + 20, base + 15, base + 10};
}

MlpParams build(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng) {
  std::vector<std::size_t> widths;
  widths.push_back(in);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  return make_mlp(widths, rng);
}

void check_mlp(const MlpParams& mlp, std::size_t in, std::size_t out, const char* name) {
  if (mlp.layers.empty() || mlp.input_width() != in || mlp.output_width() != out) {
    throw ConfigError(std::string("unit MLP ") + name + " must map " + std::to_string(in) + " -> " +
                      std::to_string(out) + ", has " + std::to_string(mlp.input_width()) + " -> " +
                      std::to_string(mlp.output_width()));
  }
  for (std::size_t l = 1; l < mlp.layers.size(); ++l) {
    if (mlp.layers[l].weight.cols() != mlp.layers[l - 1].weight.rows()) {
      throw ConfigError(std::string("unit MLP ") + name + " has non-chaining layer widths");
    }
  }
}

}  // namespace

UnitHidden default_hidden(std::size_t in_dim, std::size_t out_dim) {
  const auto c = offsets_from(in_dim);
  const auto t = offsets_from(out_dim);
  return UnitHidden{c, c, c, t, t, t};
}

UnitParams make_unit(std::size_t in_dim, std::size_t out_dim, std::size_t k, const UnitHidden& hidden,
                     Rng& rng) {
  if (in_dim == 0 || out_dim <= in_dim) {
    throw ConfigError("unit requires T > C >= 1, got C=" + std::to_string(in_dim) +
                      ", T=" + std::to_string(out_dim));
  }
  if (k == 0) throw ConfigError("unit requires K >= 1");
  UnitParams p;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  p.k = k;
  const std::size_t kw = kernel_width(in_dim, out_dim);
  p.self_gate = build(in_dim, hidden.self_gate, in_dim, rng);
  p.lambda = Matrix(1, 1, 0.0);
  p.edge_kernel = build(in_dim, hidden.edge_kernel, kw, rng);
  p.self_kernel = build(in_dim, hidden.self_kernel, kw, rng);
  p.normalizer = build(out_dim, hidden.normalizer, 1, rng);
  p.bias = Matrix(1, out_dim, 0.0);
  p.gate_self = build(out_dim, hidden.gate_self, out_dim, rng);
  p.gate_up = build(out_dim, hidden.gate_up, out_dim, rng);
  return p;
}

void validate_unit(const UnitParams& p) {
  if (p.in_dim == 0 || p.out_dim <= p.in_dim) throw ConfigError("unit requires T > C >= 1");
  if (p.k == 0) throw ConfigError("unit requires K >= 1");
  const std::size_t kw = kernel_width(p.in_dim, p.out_dim);
  check_mlp(p.self_gate, p.in_dim, p.in_dim, "f");
  check_mlp(p.edge_kernel, p.in_dim, kw, "F");
  check_mlp(p.self_kernel, p.in_dim, kw, "W");
  check_mlp(p.normalizer, p.out_dim, 1, "M");
  check_mlp(p.gate_self, p.out_dim, p.out_dim, "f1");
  check_mlp(p.gate_up, p.out_dim, p.out_dim, "f2");
  require_shape(p.lambda, 1, 1, "lambda");
  require_shape(p.bias, 1, p.out_dim, "bias b");
  if (!p.lambda.all_finite() || !p.bias.all_finite()) throw NumericError("unit lambda or b is not finite");
}

Var self_correlation(const UnitParams& params, Var points) {
  if (points.cols() != params.in_dim) {
    throw ConfigError("self_correlation: points have " + std::to_string(points.cols()) +
                      " channels, unit expects C=" + std::to_string(params.in_dim));
  }
  Tape& tape = *points.tape;
  Var weights = ad::softmax_rows(mlp_apply(tape, params.self_gate, points));
  Var gated = ad::scale(ad::mul(weights, points), tape.parameter(params.lambda));
  return ad::add(points, gated);
}

ClusterAssignment cluster_regions(const Matrix& p0, std::size_t k, Rng& rng, const LloydOptions& options) {
  if (p0.rows() < k) {
    throw ConfigError("K-Means-Conv needs N >= K, got N=" + std::to_string(p0.rows()) +
                      ", K=" + std::to_string(k));
  }
  return kmeans(p0, k, rng, options).first;
}

Var kmeans_conv(const UnitParams& params, Var p0, const ClusterAssignment& assignment) {
  Tape& tape = *p0.tape;
  const std::size_t n = p0.rows();
  const std::size_t t = params.out_dim;
  if (p0.cols() != params.in_dim) {
    throw ConfigError("kmeans_conv: P0 has " + std::to_string(p0.cols()) + " channels, expected " +
                      std::to_string(params.in_dim));
  }
  if (n < params.k) {
    throw ConfigError("kmeans_conv: N=" + std::to_string(n) + " < K=" + std::to_string(params.k));
  }
  if (assignment.k != params.k) {
    throw ConfigError("kmeans_conv: assignment has " + std::to_string(assignment.k) + " regions, unit K=" +
                      std::to_string(params.k));
  }
  validate_assignment(assignment, n);

  // every ordered pair (i, j) inside a region, including i == j
  std::vector<std::size_t> centers;
  std::vector<std::size_t> neighbors;
  Matrix neighborhood_size(n, 1);
  for (const auto& members : regions(assignment)) {
    for (std::size_t i : members) {
      neighborhood_size(i, 0) = static_cast<double>(members.size());
      for (std::size_t j : members) {
        centers.push_back(i);
        neighbors.push_back(j);
      }
    }
  }

  Var pj = ad::gather_rows(p0, neighbors);
  Var delta = ad::sub(pj, ad::gather_rows(p0, centers));
  Var edge_kernels = mlp_apply(tape, params.edge_kernel, delta);
  Var beta = ad::segment_sum(ad::kernel_apply(edge_kernels, pj, t), centers, n);

  Var m = mlp_apply(tape, params.normalizer, beta);
  if (!m.value().all_finite()) {
    throw NumericError("kmeans_conv: normalizer M produced a non-finite value (beta finite: " +
                       std::string(beta.value().all_finite() ? "yes" : "no") + ")");
  }
  Var denom = ad::clamp_magnitude(ad::mul(m, tape.constant(std::move(neighborhood_size))), kDenominatorFloor);
  Var local = ad::div_col(beta, denom);

  Var self_term = ad::kernel_apply(mlp_apply(tape, params.self_kernel, p0), p0, t);
  return ad::sigmoid(ad::add_row(ad::add(local, self_term), tape.parameter(params.bias)));
}

Var aggregate(const UnitParams& params, Var p0, Var up) {
  Tape& tape = *p0.tape;
  if (p0.rows() != up.rows()) {
    throw ConfigError("aggregate: P0 has " + std::to_string(p0.rows()) + " points, P0_up has " +
                      std::to_string(up.rows()));
  }
  if (up.cols() != params.out_dim) throw ConfigError("aggregate: P0_up must have T channels");
  Var padded = ad::pad_cols(p0, params.out_dim);
  Var z1 = mlp_apply(tape, params.gate_self, ad::column_mean(padded));
  Var z2 = mlp_apply(tape, params.gate_up, ad::column_mean(up));
  // two-way softmax per channel: e^z1 / (e^z1 + e^z2) = sigmoid(z1 - z2)
  Var m1 = ad::sigmoid(ad::sub(z1, z2));
  Var m2 = ad::one_minus(m1);
  return ad::add(ad::mul_row(padded, m1), ad::mul_row(up, m2));
}

Var maxpool_regions(Var p1, const ClusterAssignment& assignment, std::vector<std::size_t>* argmax,
                    const std::vector<std::size_t>* frozen) {
  validate_assignment(assignment, p1.rows());
  return ad::segment_max(p1, assignment.region, assignment.k, argmax, frozen);
}

UnitOutput unit_forward(const UnitParams& params, Var points, Rng& rng, const UnitForwardOptions& options) {
  if (points.rows() < params.k) {
    throw ConfigError("unit input has N=" + std::to_string(points.rows()) + " points, fewer than K=" +
                      std::to_string(params.k));
  }
  UnitOutput out;
  Var p0 = self_correlation(params, points);
  out.trace.p0 = p0.value();
  if (!out.trace.p0.all_finite()) throw NumericError("self-correlation produced non-finite values");
  out.trace.assignment = options.frozen_assignment != nullptr
                             ? *options.frozen_assignment
                             : cluster_regions(p0.value(), params.k, rng, options.lloyd);
  Var up = kmeans_conv(params, p0, out.trace.assignment);
  out.trace.up = up.value();
  Var p1 = aggregate(params, p0, up);
  out.trace.p1 = p1.value();
  out.pooled = maxpool_regions(p1, out.trace.assignment, &out.trace.argmax, options.frozen_argmax);
  if (out.pooled.rows() != params.k || out.pooled.cols() != params.out_dim) {
    throw ConfigError("unit output is " + shape_string(out.pooled.value()) + ", expected " +
                      std::to_string(params.k) + "x" + std::to_string(params.out_dim));
  }
  return out;
}

}  // namespace shrinking
