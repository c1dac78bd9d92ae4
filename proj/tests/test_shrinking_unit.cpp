#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "shrinking/errors.hpp"
#include "shrinking/gradcheck.hpp"
#include "shrinking/shrinking_unit.hpp"

using namespace shrinking;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (double& v : m.values()) v = d(rng);
  return m;
}

UnitHidden small_hidden() { return UnitHidden{{5}, {6, 4}, {5}, {4}, {5}, {4}}; }

/// Unit with every parameter (including lambda, b and MLP biases) randomized.
UnitParams random_unit(std::size_t c, std::size_t t, std::size_t k, Rng& rng,
                       const UnitHidden& hidden = small_hidden()) {
  UnitParams p = make_unit(c, t, k, hidden, rng);
  p.lambda(0, 0) = 0.8;
  p.bias = random_matrix(1, t, rng, -0.3, 0.3);
  for (MlpParams* mlp : {&p.self_gate, &p.edge_kernel, &p.self_kernel, &p.normalizer, &p.gate_self, &p.gate_up}) {
    for (auto& l : mlp->layers) l.bias = random_matrix(1, l.bias.cols(), rng, -0.2, 0.2);
  }
  // keep M away from zero so the denominator floor is not hit
  p.normalizer.layers.back().bias(0, 0) = 1.5;
  return p;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) std::copy_n(m.row(perm[i]).data(), m.cols(), out.row(i).data());
  return out;
}

}  // namespace

TEST_CASE("self_correlation: lambda = 0 is the identity") {
  Rng rng(1);
  UnitParams p = random_unit(3, 6, 2, rng);
  p.lambda(0, 0) = 0.0;
  const Matrix pts = random_matrix(10, 3, rng);
  Tape tape;
  CHECK(self_correlation(p, tape.constant(pts)).value() == pts);
}

TEST_CASE("self_correlation: constant gate gives a uniform channel weight") {
  Rng rng(2);
  UnitParams p = make_unit(2, 3, 1, small_hidden(), rng);
  for (auto& l : p.self_gate.layers) {
    l.weight.fill(0.0);
    l.bias.fill(0.0);
  }
  p.lambda(0, 0) = 1.0;
  Tape tape;
  const Matrix out = self_correlation(p, tape.constant(Matrix::from_rows({{2, 4}}))).value();
  CHECK(out == Matrix::from_rows({{3, 6}}));
}

TEST_CASE("self_correlation: matches the step-by-step oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const UnitParams p = random_unit(3, 6, 2, rng);
    const Matrix pts = random_matrix(7, 3, rng);
    Tape tape;
    const Matrix out = self_correlation(p, tape.constant(pts)).value();
    CHECK(oracle::max_diff(oracle::self_correlation(p, oracle::from_matrix(pts)), out) <= 1e-12);
  }
  Rng rng(0);
  const UnitParams p = random_unit(3, 6, 2, rng);
  Tape tape;
  CHECK_THROWS_AS(self_correlation(p, tape.constant(Matrix(4, 2))), ConfigError);
}

TEST_CASE("kmeans_conv: singleton regions reduce to a single-neighbour evaluation") {
  Rng rng(3);
  const UnitParams p = random_unit(3, 5, 4, rng);
  const Matrix p0 = random_matrix(4, 3, rng);
  ClusterAssignment a{{0, 1, 2, 3}, 4, Matrix(4, 3)};
  Tape tape;
  const Matrix up = kmeans_conv(p, tape.constant(p0), a).value();
  const std::vector<double> zero(3, 0.0);
  const auto f0 = mlp_forward(p.edge_kernel, zero);  // F(0), same for every point
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> beta(5, 0.0);
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 3; ++c) beta[r] += f0[r * 3 + c] * p0(i, c);
    }
    double denom = mlp_forward(p.normalizer, beta)[0];
    const auto w = mlp_forward(p.self_kernel, p0.row(i));
    for (std::size_t r = 0; r < 5; ++r) {
      double self = 0.0;
      for (std::size_t c = 0; c < 3; ++c) self += w[r * 3 + c] * p0(i, c);
      const double expected = 1.0 / (1.0 + std::exp(-(beta[r] / denom + self + p.bias(0, r))));
      CHECK(up(i, r) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("kmeans_conv: brute-force summation oracle and open unit range") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 10);
    const UnitParams p = random_unit(3, 6, 2, rng);
    const Matrix p0 = random_matrix(5, 3, rng);
    ClusterAssignment a{{0, 1, 1, 0, 1}, 2, Matrix(2, 3)};
    Tape tape;
    const Matrix up = kmeans_conv(p, tape.constant(p0), a).value();
    CHECK(oracle::max_diff(oracle::kmeans_conv(p, oracle::from_matrix(p0), a.region), up) <= 1e-10);
    for (double v : up.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("kmeans_conv: extreme inputs stay strictly inside (0, 1)") {
  Rng rng(4);
  UnitParams p = random_unit(3, 6, 2, rng);
  p.normalizer.layers.back().bias(0, 0) = 0.0;
  for (auto& l : p.normalizer.layers) l.weight.fill(0.0);  // M == 0, denominator floor active
  const Matrix p0 = random_matrix(6, 3, rng, -50, 50);
  ClusterAssignment a{{0, 0, 0, 1, 1, 1}, 2, Matrix(2, 3)};
  Tape tape;
  const Matrix up = kmeans_conv(p, tape.constant(p0), a).value();
  CHECK(up.all_finite());
  for (double v : up.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("kmeans_conv: N < K and wrong assignments are rejected") {
  Rng rng(5);
  const UnitParams p = random_unit(3, 6, 4, rng);
  Tape tape;
  ClusterAssignment a{{0, 1, 2}, 4, Matrix(4, 3)};
  CHECK_THROWS_AS(kmeans_conv(p, tape.constant(random_matrix(3, 3, rng)), a), ConfigError);
  ClusterAssignment empty_region{{0, 1, 2, 2, 2}, 4, Matrix(4, 3)};
  CHECK_THROWS_AS(kmeans_conv(p, tape.constant(random_matrix(5, 3, rng)), empty_region), ConfigError);
  Rng r(0);
  CHECK_THROWS_AS(unit_forward(p, tape.constant(random_matrix(3, 3, rng)), r), ConfigError);
}

TEST_CASE("kmeans_conv: identical differences receive identical edge kernels") {
  Rng rng(6);
  const UnitParams p = random_unit(3, 6, 2, rng);
  // pairs (0,1) and (2,3) lie in different regions but share p_j - p_i
  const Matrix p0 = Matrix::from_rows({{0.1, 0.2, 0.3}, {0.6, -0.1, 0.3}, {2.0, 2.0, 2.0}, {2.5, 1.7, 2.0}});
  Tape tape;
  Var x = tape.constant(p0);
  Var d1 = ad::sub(ad::gather_rows(x, std::vector<std::size_t>{1}), ad::gather_rows(x, std::vector<std::size_t>{0}));
  Var d2 = ad::sub(ad::gather_rows(x, std::vector<std::size_t>{3}), ad::gather_rows(x, std::vector<std::size_t>{2}));
  const Matrix k1 = mlp_apply(tape, p.edge_kernel, d1).value();
  const Matrix k2 = mlp_apply(tape, p.edge_kernel, d2).value();
  CHECK(max_abs_diff(k1, k2) <= 1e-15);
}

TEST_CASE("aggregate: equal gate logits give the midpoint") {
  Rng rng(7);
  UnitParams p = random_unit(2, 3, 1, rng);
  for (MlpParams* g : {&p.gate_self, &p.gate_up}) {
    for (auto& l : g->layers) {
      l.weight.fill(0.0);
      l.bias.fill(0.25);
    }
  }
  const Matrix p0 = random_matrix(4, 2, rng);
  const Matrix up = random_matrix(4, 3, rng, 0.0, 1.0);
  Tape tape;
  const Matrix p1 = aggregate(p, tape.constant(p0), tape.constant(up)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double padded = c < 2 ? p0(i, c) : 0.0;
      CHECK(p1(i, c) == doctest::Approx(0.5 * padded + 0.5 * up(i, c)).epsilon(1e-15));
    }
  }
}

TEST_CASE("aggregate: oracle agreement and gate closure") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 40);
    const UnitParams p = random_unit(2, 3, 1, rng);
    const Matrix p0 = random_matrix(4, 2, rng);
    const Matrix up = random_matrix(4, 3, rng, 0.0, 1.0);
    Tape tape;
    const Matrix p1 = aggregate(p, tape.constant(p0), tape.constant(up)).value();
    const auto ref = oracle::aggregate(p, oracle::from_matrix(p0), oracle::from_matrix(up));
    CHECK(oracle::max_diff(ref.p1, p1) <= 1e-10);

    // gates rebuilt from the same primitives must sum to one per channel
    Tape probe;
    Var z1 = mlp_apply(probe, p.gate_self, ad::column_mean(ad::pad_cols(probe.constant(p0), 3)));
    Var z2 = mlp_apply(probe, p.gate_up, ad::column_mean(probe.constant(up)));
    Var m1 = ad::sigmoid(ad::sub(z1, z2));
    Var m2 = ad::one_minus(m1);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(m1.value()(0, c) + m2.value()(0, c) - 1.0) <= 1e-12);
  }
  Rng rng(1);
  const UnitParams p = random_unit(2, 3, 1, rng);
  Tape tape;
  CHECK_THROWS_AS(aggregate(p, tape.constant(Matrix(4, 2)), tape.constant(Matrix(5, 3))), ConfigError);
}

TEST_CASE("maxpool_regions: singleton, hand example, brute-force scan") {
  Tape tape;
  const Matrix p1 = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
  ClusterAssignment singles{{2, 0, 1}, 3, Matrix(3, 2)};
  std::vector<std::size_t> argmax;
  CHECK(maxpool_regions(tape.constant(p1), singles, &argmax).value() == Matrix::from_rows({{3, 4}, {5, 6}, {1, 2}}));

  ClusterAssignment one{{0, 0}, 1, Matrix(1, 2)};
  CHECK(maxpool_regions(tape.constant(Matrix::from_rows({{1, 5}, {3, 2}})), one, &argmax).value() ==
        Matrix::from_rows({{3, 5}}));
  CHECK(argmax == std::vector<std::size_t>{1, 0});

  Rng rng(9);
  const Matrix big = random_matrix(20, 6, rng);
  ClusterAssignment a{std::vector<std::size_t>(20), 4, Matrix(4, 6)};
  for (std::size_t i = 0; i < 20; ++i) a.region[i] = (i * 7) % 4;
  const Matrix pooled = maxpool_regions(tape.constant(big), a, &argmax).value();
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t c = 0; c < 6; ++c) {
      double best = -1e300;
      for (std::size_t i = 0; i < 20; ++i) {
        if (a.region[i] == k) best = std::max(best, big(i, c));
      }
      CHECK(pooled(k, c) == best);
      CHECK(a.region[argmax[k * 6 + c]] == k);
    }
  }
}

TEST_CASE("maxpool_regions: ties go to the lowest point index") {
  Tape tape;
  ClusterAssignment a{{0, 0, 0}, 1, Matrix(1, 1)};
  std::vector<std::size_t> argmax;
  maxpool_regions(tape.constant(Matrix::from_rows({{1}, {4}, {4}})), a, &argmax);
  CHECK(argmax == std::vector<std::size_t>{1});
}

TEST_CASE("unit_forward: shape contract and first ShrinkingNet stage") {
  Rng rng(10);
  const UnitParams p = random_unit(3, 6, 5, rng);
  Tape tape;
  Rng crng(1);
  const auto out = unit_forward(p, tape.constant(random_matrix(30, 3, rng)), crng);
  CHECK(out.pooled.rows() == 5);
  CHECK(out.pooled.cols() == 6);
  CHECK(out.trace.assignment.k == 5);

  Rng init(2);
  const UnitParams first = make_unit(3, 6, 240, default_hidden(3, 6), init);
  Tape big;
  Rng crng2(3);
  const auto stage = unit_forward(first, big.constant(random_matrix(1200, 3, rng)), crng2);
  CHECK(stage.pooled.rows() == 240);
  CHECK(stage.pooled.cols() == 6);
}

TEST_CASE("unit_forward: full pipeline equals chained stage oracles") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed + 70);
    const UnitParams p = random_unit(3, 6, 3, rng, default_hidden(3, 6));
    const Matrix pts = random_matrix(12, 3, rng);
    Tape tape;
    Rng crng(seed);
    const auto out = unit_forward(p, tape.constant(pts), crng);
    const auto& tr = out.trace;
    CHECK(oracle::max_diff(oracle::self_correlation(p, oracle::from_matrix(pts)), tr.p0) <= 1e-10);
    const auto ref = oracle::unit(p, oracle::from_matrix(pts), tr.assignment.region);
    CHECK(oracle::max_diff(ref, out.pooled.value()) <= 1e-10);
    for (std::size_t k = 0; k < tr.argmax.size(); ++k) {
      CHECK(tr.assignment.region[tr.argmax[k]] == k / 6);
    }
  }
}

TEST_CASE("unit invariance: permuting members within a region") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 90);
    const UnitParams p = random_unit(3, 6, 3, rng);
    const Matrix pts = random_matrix(15, 3, rng);
    Tape tape;
    Rng crng(seed);
    const auto base = unit_forward(p, tape.constant(pts), crng);
    auto sets = regions(base.trace.assignment);
    // reverse the order of one region's members
    std::vector<std::size_t> perm(15);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto& members = sets[seed % 3];
    for (std::size_t i = 0; i < members.size(); ++i) perm[members[i]] = members[members.size() - 1 - i];
    const Matrix shuffled = permute_rows(pts, perm);
    ClusterAssignment a = base.trace.assignment;
    for (std::size_t i = 0; i < 15; ++i) a.region[i] = base.trace.assignment.region[perm[i]];
    UnitForwardOptions opts;
    opts.frozen_assignment = &a;
    Tape t2;
    Rng unused(0);
    const auto moved = unit_forward(p, t2.constant(shuffled), unused, opts);
    CHECK(max_abs_diff(moved.pooled.value(), base.pooled.value()) <= 1e-12);
    CHECK(max_abs_diff(permute_rows(base.trace.p1, perm), moved.trace.p1) <= 1e-12);
  }
}

TEST_CASE("unit equivariance: whole-cloud permutation gives permuted P1 and identical P2") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 120);
    const UnitParams p = random_unit(3, 6, 4, rng);
    const Matrix pts = random_matrix(25, 3, rng);
    std::vector<std::size_t> perm(25);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Tape t1, t2;
    Rng c1(seed), c2(seed);
    const auto a = unit_forward(p, t1.constant(pts), c1);
    const auto b = unit_forward(p, t2.constant(permute_rows(pts, perm)), c2);
    CHECK(a.pooled.value() == b.pooled.value());
    CHECK(permute_rows(a.trace.p1, perm) == b.trace.p1);
    for (std::size_t i = 0; i < 25; ++i) CHECK(b.trace.assignment.region[i] == a.trace.assignment.region[perm[i]]);
  }
}

TEST_CASE("unit gradients match finite differences with frozen discrete choices") {
  Rng rng(2025);
  UnitParams p = random_unit(3, 6, 3, rng, default_hidden(3, 6));
  Matrix pts = random_matrix(12, 3, rng);
  Tape probe;
  Rng crng(1);
  const auto base = unit_forward(p, probe.constant(pts), crng);
  const ClusterAssignment frozen = base.trace.assignment;
  const std::vector<std::size_t> argmax = base.trace.argmax;
  const Matrix weights = random_matrix(3, 6, rng);

  std::vector<Matrix*> params{&pts};
  p.for_each_parameter([&](Matrix& m) { params.push_back(&m); });
  auto loss = [&](Tape& t) {
    UnitForwardOptions opts;
    opts.frozen_assignment = &frozen;
    opts.frozen_argmax = &argmax;
    Rng unused(0);
    Var y = unit_forward(p, t.parameter(pts), unused, opts).pooled;
    return ad::sum_all(ad::mul(y, t.constant(weights)));
  };
  const auto report = finite_diff_check(loss, params);
  INFO("worst param " << report.worst_param << " analytic " << report.worst_analytic << " numeric "
                      << report.worst_numeric);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("stage gradients match finite differences") {
  Rng rng(77);
  UnitParams p = random_unit(3, 6, 3, rng);
  Matrix pts = random_matrix(12, 3, rng);
  Matrix up_in = random_matrix(12, 6, rng, 0.1, 0.9);
  ClusterAssignment a{{0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 0, 1}, 3, Matrix(3, 3)};
  std::vector<Matrix*> params{&pts, &up_in};
  p.for_each_parameter([&](Matrix& m) { params.push_back(&m); });
  const Matrix w6 = random_matrix(12, 6, rng);
  const Matrix w3 = random_matrix(12, 3, rng);

  std::vector<std::size_t> argmax;
  {
    Tape t;
    maxpool_regions(t.constant(up_in), a, &argmax);
  }
  const Matrix wk = random_matrix(3, 6, rng);

  const std::vector<std::pair<const char*, LossBuilder>> stages = {
      {"self_correlation",
       [&](Tape& t) { return ad::sum_all(ad::mul(self_correlation(p, t.parameter(pts)), t.constant(w3))); }},
      {"kmeans_conv",
       [&](Tape& t) { return ad::sum_all(ad::mul(kmeans_conv(p, t.parameter(pts), a), t.constant(w6))); }},
      {"aggregate",
       [&](Tape& t) {
         return ad::sum_all(ad::mul(aggregate(p, t.parameter(pts), t.parameter(up_in)), t.constant(w6)));
       }},
      {"maxpool",
       [&](Tape& t) {
         return ad::sum_all(ad::mul(maxpool_regions(t.parameter(up_in), a, nullptr, &argmax), t.constant(wk)));
       }},
  };
  for (const auto& [name, loss] : stages) {
    const auto report = finite_diff_check(loss, params);
    INFO(name << " worst param " << report.worst_param);
    CHECK(report.max_rel_error <= 1e-4);
  }
}
