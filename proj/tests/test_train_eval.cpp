#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "shrinking/checkpoint.hpp"
#include "shrinking/errors.hpp"
#include "shrinking/synthetic.hpp"
#include "shrinking/train.hpp"

using namespace shrinking;

namespace {

NetworkConfig tiny_net(std::size_t classes = 3) {
  NetworkConfig c;
  const UnitHidden h{{6}, {8}, {6}, {6}, {6}, {6}};
  c.layers = {LayerSpec{1, 4, 6, h}, LayerSpec{1, 1, 9, h}};
  c.classifier_hidden = {12};
  c.classes = classes;
  return c;
}

DatasetCache tiny_data(std::size_t per_class = 4, std::uint64_t seed = 0) {
  SynthOptions o;
  o.per_class = per_class;
  o.points = 24;
  o.seed = seed;
  return synth_dataset(o);
}

TrainConfig quick_train() {
  TrainConfig t;
  t.lr = 3e-3;
  t.batch_size = 4;
  t.max_epochs = 4;
  t.validation_fraction = 0.25;
  t.seed = 9;
  return t;
}

std::vector<Matrix> weights(const NetworkParams& p) {
  std::vector<Matrix> out;
  p.for_each_parameter([&](const Matrix& m) { out.push_back(m); });
  return out;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
           return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
         });
}

std::vector<double> history_losses(const Checkpoint& c) {
  std::vector<double> out;
  for (const auto& h : c.history) {
    out.push_back(h.train_loss);
    out.push_back(h.val_accuracy);
  }
  return out;
}

}  // namespace

TEST_CASE("nll_loss: perfect, uniform, direct formula, label range") {
  Tape tape;
  CHECK(nll_loss(tape.constant(Matrix::from_rows({{0.0, -INFINITY}})), std::vector<std::size_t>{0}).value()(0, 0) ==
        0.0);
  const Matrix uniform(1, 10, -std::log(10.0));
  CHECK(nll_loss(tape.constant(uniform), std::vector<std::size_t>{7}).value()(0, 0) ==
        doctest::Approx(2.302585092994046).epsilon(1e-15));

  Rng rng(1);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix logits(4, 5);
    for (double& v : logits.values()) v = d(rng);
    const std::vector<std::size_t> labels{0, 4, 2, 2};
    Var lp = ad::log_softmax_rows(tape.constant(logits));
    double expected = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits(r, c));
      expected += -std::log(std::exp(logits(r, labels[r])) / z);
    }
    CHECK(nll_loss(lp, labels).value()(0, 0) == doctest::Approx(expected / 4.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(nll_loss(tape.constant(uniform), std::vector<std::size_t>{10}), ConfigError);
}

TEST_CASE("metrics: identity, 2x2 example, hand-built confusion") {
  const Metrics id = metrics_from_confusion({{4, 0, 0}, {0, 2, 0}, {0, 0, 7}});
  CHECK(id.accuracy == 1.0);
  for (const auto& s : id.per_class) {
    CHECK(s.precision == 1.0);
    CHECK(s.recall == 1.0);
    CHECK(s.f1 == 1.0);
  }

  const Metrics two = metrics_from_confusion({{3, 1}, {1, 5}});
  CHECK(two.per_class[0].precision == 0.75);
  CHECK(two.per_class[0].recall == 0.75);
  CHECK(two.per_class[0].f1 == 0.75);
  CHECK(two.per_class[1].precision == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(two.accuracy == 0.8);

  // A: 3 TP and 1 FN (predicted as B); B: 5 TP and that 1 FP; C: 1 TP
  const Metrics hand = metrics_from_confusion({{3, 1, 0}, {0, 5, 0}, {0, 0, 1}});
  CHECK(hand.total == 10);
  CHECK(hand.per_class[0].precision == 1.0);
  CHECK(hand.per_class[0].recall == 0.75);
  CHECK(hand.per_class[0].f1 == doctest::Approx(6.0 / 7.0).epsilon(1e-15));
  CHECK(hand.per_class[1].precision == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(hand.per_class[1].recall == 1.0);
  CHECK(hand.per_class[1].f1 == doctest::Approx(10.0 / 11.0).epsilon(1e-15));
  CHECK(hand.accuracy == 0.9);
  CHECK(hand.micro_precision == hand.accuracy);
}

TEST_CASE("metrics: undefined statistics are NaN, not zero") {
  const Metrics m = metrics_from_confusion({{5, 0}, {0, 0}});
  CHECK(std::isnan(m.per_class[1].recall));
  CHECK(std::isnan(m.per_class[1].precision));
  CHECK(std::isnan(m.per_class[1].f1));
  const Metrics wrong = metrics_from_confusion({{0, 2}, {3, 0}});
  CHECK(wrong.per_class[0].precision == 0.0);
  CHECK(wrong.per_class[0].f1 == 0.0);
  CHECK(wrong.accuracy == 0.0);
  CHECK_THROWS_AS(metrics_from_confusion({}), ConfigError);
  CHECK_THROWS_AS(metrics_from_confusion({{1, 2}}), ConfigError);
  CHECK_THROWS_AS(metrics_from_confusion({{0, 0}, {0, 0}}), ConfigError);
}

TEST_CASE("metrics: relabeling permutes per-class statistics; micro precision equals accuracy") {
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> cnt(0, 9);
  for (int trial = 0; trial < 20; ++trial) {
    Confusion c(4, std::vector<std::size_t>(4));
    for (auto& row : c) {
      for (auto& v : row) v = cnt(rng);
    }
    c[0][0] += 1;
    std::vector<std::size_t> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    Confusion p(4, std::vector<std::size_t>(4));
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t q = 0; q < 4; ++q) p[perm[t]][perm[q]] = c[t][q];
    }
    const Metrics a = metrics_from_confusion(c);
    const Metrics b = metrics_from_confusion(p);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.micro_precision == doctest::Approx(a.accuracy).epsilon(1e-15));
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& x = a.per_class[k];
      const auto& y = b.per_class[perm[k]];
      CHECK(((std::isnan(x.precision) && std::isnan(y.precision)) || x.precision == y.precision));
      CHECK(((std::isnan(x.recall) && std::isnan(y.recall)) || x.recall == y.recall));
      CHECK(((std::isnan(x.f1) && std::isnan(y.f1)) || x.f1 == y.f1));
    }
  }
}

TEST_CASE("confusion_matrix, argmax ties and report layout") {
  const std::vector<std::size_t> truth{0, 0, 1, 2, 2};
  const std::vector<std::size_t> pred{0, 1, 1, 2, 0};
  const Confusion c = confusion_matrix(truth, pred, 3);
  CHECK(c == Confusion{{1, 1, 0}, {0, 1, 0}, {1, 0, 1}});
  CHECK_THROWS_AS(confusion_matrix(truth, std::vector<std::size_t>{0, 0, 0, 0, 3}, 3), ConfigError);
  CHECK(argmax_class(std::vector<double>{0.1, 0.7, 0.7, 0.2}) == 1);
  CHECK(argmax_class(std::vector<double>{-1.0}) == 0);

  const std::string report = format_report(metrics_from_confusion({{3, 1}, {1, 5}}), {"bathtub", "chair"});
  const auto p = report.find("Precision (%)");
  const auto r = report.find("Recall (%)");
  const auto f = report.find("F1-Score (%)");
  CHECK(report.find("Shapes") < p);
  CHECK(p < r);
  CHECK(r < f);
  CHECK(report.find("75.00") != std::string::npos);
  CHECK(report.find("80.00%") != std::string::npos);
  CHECK(format_report(metrics_from_confusion({{5, 0}, {0, 0}}), {"a", "b"}).find("n/a") != std::string::npos);
}

TEST_CASE("stratified_split keeps class proportions and is deterministic") {
  const DatasetCache data = tiny_data(10);
  const auto [train, val] = stratified_split(data, 0.1, 4);
  CHECK(val.size() == 3);
  CHECK(train.size() == 27);
  std::vector<std::size_t> per_class(3, 0);
  for (std::size_t i : val) ++per_class[data.samples[i].label];
  CHECK(per_class == std::vector<std::size_t>{1, 1, 1});
  std::set<std::size_t> all(train.begin(), train.end());
  all.insert(val.begin(), val.end());
  CHECK(all.size() == 30);
  CHECK(stratified_split(data, 0.1, 4) == std::make_pair(train, val));
  CHECK(stratified_split(data, 0.0, 4).second.empty());
}

TEST_CASE("train config validation and data compatibility") {
  TrainConfig t = quick_train();
  t.validation_fraction = 0.6;
  CHECK_THROWS_WITH_AS(validate_train_config(t), doctest::Contains("validation_fraction"), ConfigError);
  t = quick_train();
  t.batch_size = 0;
  CHECK_THROWS_WITH_AS(validate_train_config(t), doctest::Contains("batch_size"), ConfigError);
  t = quick_train();
  t.lr = -1;
  CHECK_THROWS_AS(validate_train_config(t), ConfigError);
  CHECK_THROWS_AS(train(quick_train(), tiny_net(4), tiny_data()), ConfigError);
  DatasetCache empty = tiny_data();
  empty.samples.clear();
  CHECK_THROWS_AS(train(quick_train(), tiny_net(), empty), ConfigError);
}

TEST_CASE("training is deterministic and independent of the worker count") {
  const DatasetCache data = tiny_data();
  const Checkpoint a = train(quick_train(), tiny_net(), data);
  const Checkpoint b = train(quick_train(), tiny_net(), data);
  CHECK(a.history.size() == 4);
  CHECK(a.step_losses.size() == 4 * 3);  // 9 training samples in batches of 4
  CHECK(same_bits(a.step_losses, b.step_losses));
  CHECK(same_bits(history_losses(a), history_losses(b)));
  CHECK(weights(a.params) == weights(b.params));

  TrainConfig threaded = quick_train();
  threaded.threads = 3;
  const Checkpoint c = train(threaded, tiny_net(), data);
  CHECK(same_bits(a.step_losses, c.step_losses));
  CHECK(weights(a.params) == weights(c.params));

  TrainConfig other = quick_train();
  other.seed = 10;
  CHECK(!same_bits(a.step_losses, train(other, tiny_net(), data).step_losses));
}

TEST_CASE("checkpoint round trip and resume reproduce the uninterrupted run") {
  const DatasetCache data = tiny_data();
  const Checkpoint full = train(quick_train(), tiny_net(), data);

  Checkpoint part = start_training(quick_train(), tiny_net(), data);
  TrainHooks stop;
  stop.epoch_budget = 2;
  continue_training(part, data, stop);
  CHECK(part.epoch == 2);
  CHECK(!part.finished);

  const auto path = std::filesystem::temp_directory_path() / "shrinking_resume_test.ckpt";
  save_checkpoint(part, path);
  Checkpoint resumed = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(encode_checkpoint(resumed) == encode_checkpoint(part));
  continue_training(resumed, data);

  CHECK(resumed.finished);
  CHECK(same_bits(resumed.step_losses, full.step_losses));
  CHECK(same_bits(history_losses(resumed), history_losses(full)));
  CHECK(weights(resumed.params) == weights(full.params));
  CHECK(weights(resumed.best_params) == weights(full.best_params));
  CHECK(resumed.adam.second_moment == full.adam.second_moment);
  CHECK(encode_checkpoint(resumed) == encode_checkpoint(full));

  std::vector<std::uint8_t> bytes = encode_checkpoint(full);
  bytes[bytes.size() / 3] ^= 0x01;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes), doctest::Contains("checksum"), DataError);
  bytes = encode_checkpoint(full);
  bytes[8] = 7;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes), doctest::Contains("version"), DataError);
}

TEST_CASE("early stopping, best-validation weights and evaluation") {
  const DatasetCache data = tiny_data(6);
  TrainConfig t = quick_train();
  t.lr = 1e-12;  // validation accuracy cannot move
  t.max_epochs = 50;
  t.patience = 3;
  const Checkpoint c = train(t, tiny_net(), data);
  CHECK(c.finished);
  CHECK(c.history.size() == 4);  // best at epoch 0, then three epochs without improvement
  CHECK(c.best_epoch == 0);

  const Metrics m = evaluate(c, data);
  CHECK(m.total == data.samples.size());
  std::size_t sum = 0;
  for (const auto& row : m.confusion) {
    for (std::size_t v : row) sum += v;
  }
  CHECK(sum == data.samples.size());
  DatasetCache wide = data;
  wide.dims = 6;
  for (auto& s : wide.samples) s.cloud = Matrix(24, 6);
  CHECK_THROWS_AS(evaluate(c, wide), ConfigError);

  const std::string table = format_history(c.history);
  CHECK(table.rfind("epoch train_loss val_accuracy steps\n", 0) == 0);
}

TEST_CASE("non-finite weights abort training with diagnostics") {
  const DatasetCache data = tiny_data();
  Checkpoint c = start_training(quick_train(), tiny_net(), data);
  c.params.classifier.layers[0].bias(0, 3) = std::nan("");
  try {
    continue_training(c, data);
    FAIL("expected a numeric failure");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
    CHECK(msg.find("classifier.layer0.bias") != std::string::npos);
  }
  Checkpoint u = start_training(quick_train(), tiny_net(), data);
  u.params.units[0][0].edge_kernel.layers[1].weight(0, 0) = INFINITY;
  CHECK_THROWS_WITH_AS(continue_training(u, data), doctest::Contains("unit[0][0].F.layer1.weight"), NumericError);
}

TEST_CASE("memorization: eight clouds are fitted and smoothed loss decreases") {
  SynthOptions o;
  o.per_class = 3;
  o.points = 32;
  DatasetCache data = synth_dataset(o);
  data.samples.pop_back();
  NetworkConfig net;
  net.layers = {LayerSpec{1, 6, 6, {}}, LayerSpec{1, 1, 12, {}}};
  net.classifier_hidden = {24, 24};
  net.classes = 3;
  TrainConfig t;
  t.lr = 3e-3;
  t.batch_size = 8;
  t.noise_sigma = 0.0;
  t.validation_fraction = 0.0;
  t.max_epochs = 500;
  const Checkpoint c = train(t, net, data);
  CHECK(c.step_losses.size() == 500);
  const auto first = std::find_if(c.step_losses.begin(), c.step_losses.end(), [](double l) { return l < 0.01; });
  CHECK(first != c.step_losses.end());
  // block means over 20 steps never rise by more than a small tolerance
  std::vector<double> blocks;
  for (std::size_t s = 0; s + 20 <= c.step_losses.size(); s += 20) {
    double m = 0.0;
    for (std::size_t i = s; i < s + 20; ++i) m += c.step_losses[i];
    blocks.push_back(m / 20.0);
  }
  for (std::size_t b = 1; b < blocks.size(); ++b) CHECK(blocks[b] <= blocks[b - 1] * 1.05 + 1e-4);
}
