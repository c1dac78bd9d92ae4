#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "shrinking/autodiff.hpp"
#include "shrinking/errors.hpp"
#include "shrinking/gradcheck.hpp"
#include "shrinking/mlp.hpp"
#include "shrinking/optim.hpp"

using namespace shrinking;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (double& v : m.values()) v = d(rng);
  return m;
}

MlpParams single_identity_layer(OutputActivation act) {
  MlpParams p;
  p.output = act;
  p.layers.push_back({Matrix::from_rows({{1, 0}, {0, 1}}), Matrix(1, 2, 0.0)});
  return p;
}

}  // namespace

TEST_CASE("mlp_forward: identity layer with identity and ReLU output") {
  const std::vector<double> x{1.0, -2.0};
  CHECK(mlp_forward(single_identity_layer(OutputActivation::identity), x) == std::vector<double>{1.0, -2.0});
  CHECK(mlp_forward(single_identity_layer(OutputActivation::relu), x) == std::vector<double>{1.0, 0.0});
}

TEST_CASE("mlp_forward: two-layer chain matches a long-double affine oracle") {
  Rng rng(11);
  const std::vector<std::size_t> widths{4, 7, 3};
  MlpParams p = make_mlp(widths, rng);
  for (auto& l : p.layers) l.bias = random_matrix(1, l.bias.cols(), rng);
  const std::vector<double> x{0.3, -1.2, 0.7, 2.0};

  std::vector<long double> h(7);
  for (std::size_t o = 0; o < 7; ++o) {
    long double acc = p.layers[0].bias(0, o);
    for (std::size_t i = 0; i < 4; ++i) acc += static_cast<long double>(p.layers[0].weight(o, i)) * x[i];
    h[o] = acc > 0 ? acc : 0;
  }
  const auto y = mlp_forward(p, x);
  REQUIRE(y.size() == 3);
  for (std::size_t o = 0; o < 3; ++o) {
    long double acc = p.layers[1].bias(0, o);
    for (std::size_t i = 0; i < 7; ++i) acc += static_cast<long double>(p.layers[1].weight(o, i)) * h[i];
    CHECK(y[o] == doctest::Approx(static_cast<double>(acc)).epsilon(1e-12));
  }

  Tape tape;
  Matrix xm = Matrix::row_vector(x);
  Var out = mlp_apply(tape, p, tape.constant(xm));
  for (std::size_t o = 0; o < 3; ++o) CHECK(out.value()(0, o) == y[o]);
}

TEST_CASE("mlp_forward: dimension mismatch is a configuration error") {
  Rng rng(1);
  const std::vector<std::size_t> widths{3, 2};
  MlpParams p = make_mlp(widths, rng);
  const std::vector<double> x{1.0, 2.0};
  CHECK_THROWS_AS(mlp_forward(p, x), ConfigError);
}

TEST_CASE("softmax: symmetric, stable, and matches the direct formula") {
  Tape tape;
  Var s = ad::softmax_rows(tape.constant(Matrix::from_rows({{0, 0, 0}})));
  for (double v : s.value().values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Var big = ad::softmax_rows(tape.constant(Matrix::from_rows({{1000, 0}})));
  CHECK(std::abs(big.value()(0, 0) - 1.0) <= 1e-12);
  CHECK(std::abs(big.value()(0, 1)) <= 1e-12);
  CHECK(big.value().all_finite());

  Var ramp = ad::softmax_rows(tape.constant(Matrix::from_rows({{1, 2, 3}})));
  const long double denom = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) {
    const long double expected = std::exp(static_cast<long double>(i + 1)) / denom;
    CHECK(std::abs(ramp.value()(0, i) - static_cast<double>(expected)) <= 1e-15);
  }
}

TEST_CASE("softmax property: sums to one and ignores constant shifts") {
  Rng rng(5);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix v = random_matrix(1, 1 + trial % 9, rng, -20, 20);
    Matrix w = v;
    const double c = shift(rng);
    for (double& x : w.values()) x += c;
    Tape tape;
    const Matrix a = ad::softmax_rows(tape.constant(v)).value();
    const Matrix b = ad::softmax_rows(tape.constant(w)).value();
    const double total = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    CHECK(std::abs(total - 1.0) <= 1e-12);
    CHECK(max_abs_diff(a, b) <= 1e-12);
  }
}

TEST_CASE("sigmoid: midpoint, saturation, direct formula") {
  Tape tape;
  Var s = ad::sigmoid(tape.constant(Matrix::from_rows({{0.0, -60.0, -1000.0, 1.0, 1000.0}})));
  CHECK(s.value()(0, 0) == 0.5);
  CHECK(s.value()(0, 1) > 0.0);
  CHECK(s.value()(0, 1) <= 1e-10);
  CHECK(s.value()(0, 2) > 0.0);
  CHECK(s.value()(0, 2) <= 1e-10);
  CHECK(std::abs(s.value()(0, 3) - static_cast<double>(1.0L / (1.0L + std::exp(-1.0L)))) <= 1e-12);
  CHECK(s.value()(0, 4) < 1.0);
  CHECK(s.value().all_finite());
}

TEST_CASE("glorot_init: bound, determinism, variance") {
  Rng rng(3);
  const Matrix w = glorot_init(3, 3, rng);
  CHECK(w.rows() == 3);
  CHECK(w.cols() == 3);
  for (double v : w.values()) CHECK(std::abs(v) <= 1.0);

  Rng a(99), b(99);
  CHECK(glorot_init(5, 7, a) == glorot_init(5, 7, b));

  Rng big(2024);
  const double bound = std::sqrt(6.0 / 12.0);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  while (n < 100000) {
    const Matrix draw = glorot_init(4, 8, big);
    for (double v : draw.values()) {
      CHECK(std::abs(v) <= bound);
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  const double expected = bound * bound / 3.0;  // = 2 / (fan_in + fan_out)
  CHECK(expected == doctest::Approx(2.0 / 12.0));
  CHECK(std::abs(var - expected) / expected < 0.05);

  CHECK_THROWS_AS(glorot_init(0, 3, rng), ConfigError);
}

TEST_CASE("backward: quadratic, unused parameter, foreign loss") {
  Matrix x = Matrix::from_rows({{1.0, 2.0}});
  Matrix unused(2, 2, 0.5);
  Tape tape;
  Var vx = tape.parameter(x);
  tape.parameter(unused);
  Var loss = ad::sum_all(ad::mul(vx, vx));
  tape.backward(loss);
  CHECK(tape.grad_of(x) == Matrix::from_rows({{2.0, 4.0}}));
  CHECK(tape.grad_of(unused) == Matrix(2, 2, 0.0));

  Matrix never_registered(1, 3, 1.0);
  CHECK(tape.grad_of(never_registered) == Matrix(1, 3, 0.0));

  Tape other;
  Var foreign = ad::sum_all(other.constant(Matrix(1, 1, 2.0)));
  CHECK_THROWS_AS(tape.backward(foreign), ConfigError);
  CHECK_THROWS_AS(tape.backward(vx), ConfigError);  // not a scalar
}

TEST_CASE("backward: random two-layer MLP with NLL against finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const std::vector<std::size_t> widths{5, 8, 4};
    MlpParams p = make_mlp(widths, rng);
    for (auto& l : p.layers) l.bias = random_matrix(1, l.bias.cols(), rng, -0.1, 0.1);
    const Matrix x = random_matrix(3, 5, rng);
    std::vector<Matrix*> params;
    p.for_each_parameter([&](Matrix& m) { params.push_back(&m); });
    auto loss = [&](Tape& t) {
      Var lp = ad::log_softmax_rows(mlp_apply(t, p, t.constant(x)));
      Var nll = ad::neg(ad::add(ad::add(ad::pick(lp, 0, 1), ad::pick(lp, 1, 3)), ad::pick(lp, 2, 0)));
      return ad::scale(nll, 1.0 / 3.0);
    };
    const auto report = finite_diff_check(loss, params);
    CHECK(report.max_rel_error <= 1e-4);
  }
}

TEST_CASE("gradient property: every primitive matches central differences on 20 instances") {
  using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;
  // inputs: A 4x3, B 4x3, R 1x3, Col 4x1, S 1x1, W 2x3, Bias 1x2, Kern 4x6
  const std::vector<std::pair<const char*, Builder>> ops = {
      {"add", [](Tape&, const std::vector<Var>& v) { return ad::add(v[0], v[1]); }},
      {"sub", [](Tape&, const std::vector<Var>& v) { return ad::sub(v[0], v[1]); }},
      {"mul", [](Tape&, const std::vector<Var>& v) { return ad::mul(v[0], v[1]); }},
      {"mul_self", [](Tape&, const std::vector<Var>& v) { return ad::mul(v[0], v[0]); }},
      {"scale", [](Tape&, const std::vector<Var>& v) { return ad::scale(v[0], v[4]); }},
      {"add_row", [](Tape&, const std::vector<Var>& v) { return ad::add_row(v[0], v[2]); }},
      {"mul_row", [](Tape&, const std::vector<Var>& v) { return ad::mul_row(v[0], v[2]); }},
      {"div_col", [](Tape&, const std::vector<Var>& v) { return ad::div_col(v[0], v[3]); }},
      {"linear", [](Tape&, const std::vector<Var>& v) { return ad::linear(v[0], v[5], v[6]); }},
      {"relu", [](Tape&, const std::vector<Var>& v) { return ad::relu(v[0]); }},
      {"sigmoid", [](Tape&, const std::vector<Var>& v) { return ad::sigmoid(ad::scale(v[0], 3.0)); }},
      {"one_minus", [](Tape&, const std::vector<Var>& v) { return ad::one_minus(v[0]); }},
      {"softmax", [](Tape&, const std::vector<Var>& v) { return ad::softmax_rows(v[0]); }},
      {"log_softmax", [](Tape&, const std::vector<Var>& v) { return ad::log_softmax_rows(v[0]); }},
      {"segment_sum", [](Tape&, const std::vector<Var>& v) {
         return ad::segment_sum(v[0], std::vector<std::size_t>{1, 0, 1, 1}, 2);
       }},
      {"column_mean", [](Tape&, const std::vector<Var>& v) { return ad::column_mean(v[0]); }},
      {"segment_max", [](Tape&, const std::vector<Var>& v) {
         return ad::segment_max(v[0], std::vector<std::size_t>{0, 1, 0, 1}, 2, nullptr);
       }},
      {"kernel_apply", [](Tape&, const std::vector<Var>& v) { return ad::kernel_apply(v[7], v[0], 2); }},
      {"concat_pad", [](Tape&, const std::vector<Var>& v) {
         return ad::pad_cols(ad::concat_rows(std::vector<Var>{v[0], v[1]}), 5);
       }},
      {"gather", [](Tape&, const std::vector<Var>& v) {
         return ad::gather_rows(v[0], std::vector<std::size_t>{2, 0, 2});
       }},
      {"clamp", [](Tape&, const std::vector<Var>& v) { return ad::clamp_magnitude(v[0], 0.05); }},
  };
  const std::vector<std::pair<std::size_t, std::size_t>> shapes = {{4, 3}, {4, 3}, {1, 3}, {4, 1},
                                                                   {1, 1}, {2, 3}, {1, 2}, {4, 6}};
  for (const auto& [name, build] : ops) {
    double worst = 0.0;
    for (std::uint64_t instance = 0; instance < 20; ++instance) {
      Rng rng(derive_seed(instance, {std::hash<std::string>{}(name)}));
      std::vector<Matrix> inputs;
      for (auto [r, c] : shapes) inputs.push_back(random_matrix(r, c, rng));
      for (double& v : inputs[3].values()) v = (v < 0 ? -0.5 : 0.5) + v;  // keep divisors away from 0
      const Matrix weights = random_matrix(16, 16, rng);
      std::vector<Matrix*> params;
      for (auto& m : inputs) params.push_back(&m);
      auto loss = [&](Tape& t) {
        std::vector<Var> vars;
        for (auto& m : inputs) vars.push_back(t.parameter(m));
        Var y = build(t, vars);
        Matrix w(y.rows(), y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r) {
          for (std::size_t c = 0; c < y.cols(); ++c) w(r, c) = weights(r, c);
        }
        return ad::sum_all(ad::mul(y, t.constant(w)));
      };
      worst = std::max(worst, finite_diff_check(loss, params).max_rel_error);
    }
    INFO(name);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("finite_diff_check: polynomial, constant, corrupted gradient") {
  Matrix x(1, 1, 3.0);
  std::vector<Matrix*> params{&x};
  auto square = [&](Tape& t) {
    Var v = t.parameter(x);
    return ad::sum_all(ad::mul(v, v));
  };
  const auto report = finite_diff_check(square, params);
  CHECK(std::abs(report.worst_numeric - 6.0) <= 1e-8);
  CHECK(report.worst_analytic == 6.0);

  auto constant = [&](Tape& t) {
    t.parameter(x);
    return ad::sum_all(t.constant(Matrix(1, 1, 4.0)));
  };
  const auto flat = finite_diff_check(constant, params);
  CHECK(flat.max_rel_error == 0.0);
  CHECK(flat.worst_numeric == 0.0);

  GradCheckOptions corrupt;
  corrupt.analytic_bias = 1e-2;
  CHECK(finite_diff_check(square, params, corrupt).max_rel_error > 1e-4);
}

TEST_CASE("adam_step: zero gradient, closed-form first step, two-step recurrence") {
  AdamConfig cfg;
  {
    Matrix w = Matrix::from_rows({{1.5, -2.0}, {0.25, 7.0}});
    const Matrix before = w;
    AdamState state;
    std::vector<Matrix*> params{&w};
    std::vector<Matrix> grads{Matrix(2, 2, 0.0)};
    for (int i = 0; i < 10; ++i) adam_step(state, params, grads, cfg);
    CHECK(w == before);
    CHECK(state.step == 10);
  }
  {
    Matrix w(1, 1, 1.0);
    AdamState state;
    std::vector<Matrix*> params{&w};
    std::vector<Matrix> grads{Matrix(1, 1, 1.0)};
    AdamConfig fast;
    fast.lr = 0.1;
    adam_step(state, params, grads, fast);
    CHECK(std::abs(w(0, 0) - 0.9) <= 1e-6);

    // second identical step, scalar recurrence evaluated by hand
    double m = 0.1, v = 0.001, p = 1.0 - 0.1 * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
    m = 0.9 * m + 0.1 * 1.0;
    v = 0.999 * v + 0.001 * 1.0;
    p -= 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    adam_step(state, params, grads, fast);
    CHECK(w(0, 0) == doctest::Approx(p).epsilon(1e-14));
  }
  {
    Matrix w(2, 2, 0.0);
    AdamState state;
    std::vector<Matrix*> params{&w};
    std::vector<Matrix> grads{Matrix(2, 3, 0.0)};
    CHECK_THROWS_AS(adam_step(state, params, grads, cfg), ConfigError);
  }
}
