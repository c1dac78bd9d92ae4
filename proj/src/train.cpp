#include "shrinking/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <thread>

#include "shrinking/errors.hpp"
#include "shrinking/sampling.hpp"

namespace shrinking {
namespace {

// stream tags for derive_seed
constexpr std::uint64_t kSplitTag = 0x5b117;
constexpr std::uint64_t kShuffleTag = 0x5f1e;
constexpr std::uint64_t kNoiseTag = 0x9015e;
constexpr std::uint64_t kForwardTag = 0xf0a4d;
constexpr std::uint64_t kEvalTag = 0xe7a1;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception (lowest index) is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct ItemResult {
  double loss = 0.0;
  std::vector<Matrix> grads;
};

ItemResult forward_backward(const NetworkParams& params, const std::vector<const Matrix*>& blocks,
                            const Matrix& cloud, std::size_t label, std::uint64_t forward_seed) {
  Tape tape;
  Var lp = network_forward(params, tape.constant(cloud), forward_seed).log_probs;
  const std::size_t labels[1] = {label};
  Var loss = nll_loss(lp, labels);
  ItemResult r;
  r.loss = loss.value()(0, 0);
  if (!std::isfinite(r.loss)) return r;
  tape.backward(loss);
  r.grads.reserve(blocks.size());
  for (const Matrix* b : blocks) r.grads.push_back(tape.grad_of(*b));
  return r;
}

std::string nonfinite_block(const std::vector<Matrix>& grads, const NetworkParams& params) {
  const auto labels = parameter_labels(params);
  for (std::size_t b = 0; b < grads.size(); ++b) {
    if (!grads[b].all_finite()) return labels.at(b);
  }
  return "";
}

std::string first_nonfinite_param(const std::vector<Matrix*>& blocks, const NetworkParams& params) {
  const auto labels = parameter_labels(params);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (!blocks[b]->all_finite()) return labels[b];
  }
  return "none (all weights finite)";
}

std::vector<std::size_t> indices_of(const DatasetCache& data) {
  std::vector<std::size_t> all(data.samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

}  // namespace

void validate_train_config(const TrainConfig& c) {
  auto fail = [](const std::string& field, const std::string& msg) { throw ConfigError("train." + field + " " + msg); };
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) fail("lr", "must be a positive finite number");
  if (!(c.beta1 > 0.0 && c.beta1 < 1.0)) fail("beta1", "must lie in (0, 1)");
  if (!(c.beta2 > 0.0 && c.beta2 < 1.0)) fail("beta2", "must lie in (0, 1)");
  if (!(c.eps > 0.0)) fail("eps", "must be positive");
  if (c.batch_size == 0) fail("batch_size", "must be >= 1");
  if (c.max_epochs == 0) fail("max_epochs", "must be >= 1");
  if (!(c.noise_sigma >= 0.0) || !std::isfinite(c.noise_sigma)) fail("noise_sigma", "must be finite and >= 0");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction <= 0.5)) {
    fail("validation_fraction", "must lie in [0, 0.5]");
  }
  if (c.threads == 0) fail("threads", "must be >= 1");
}

Var nll_loss(Var log_probs, std::span<const std::size_t> labels) {
  if (labels.size() != log_probs.rows()) throw ConfigError("nll_loss: one label per row required");
  if (labels.empty()) throw ConfigError("nll_loss: empty batch");
  Var total;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= log_probs.cols()) {
      throw ConfigError("nll_loss: label " + std::to_string(labels[i]) + " outside " +
                        std::to_string(log_probs.cols()) + " classes");
    }
    Var term = ad::pick(log_probs, i, labels[i]);
    total = i == 0 ? term : ad::add(total, term);
  }
  return ad::scale(total, -1.0 / static_cast<double>(labels.size()));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const DatasetCache& data,
                                                                                 double fraction,
                                                                                 std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(data.class_names.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) by_class.at(data.samples[i].label).push_back(i);
  std::vector<std::size_t> train, val;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    Rng rng(derive_seed(seed, {kSplitTag, c}));
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size()) + 0.5));
    val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

Checkpoint start_training(const TrainConfig& train, const NetworkConfig& net, const DatasetCache& data) {
  validate_train_config(train);
  validate_config(net);
  validate_dataset(data);
  if (data.samples.empty()) throw ConfigError("training data is empty");
  if (data.dims != net.input_dim) {
    throw ConfigError("data has " + std::to_string(data.dims) + " channels but network.input_dim is " +
                      std::to_string(net.input_dim));
  }
  if (data.class_names.size() != net.classes) {
    throw ConfigError("data has " + std::to_string(data.class_names.size()) + " classes but network.classes is " +
                      std::to_string(net.classes));
  }
  if (data.points < net.layers.front().k) {
    throw ConfigError("clouds have " + std::to_string(data.points) + " points, first layer needs K=" +
                      std::to_string(net.layers.front().k));
  }
  Checkpoint c;
  c.train = train;
  c.class_names = data.class_names;
  c.points = data.points;
  c.params = build_network(net, train.seed);
  c.best_params = c.params;
  return c;
}

void continue_training(Checkpoint& ckpt, const DatasetCache& data, const TrainHooks& hooks) {
  const TrainConfig& cfg = ckpt.train;
  validate_train_config(cfg);
  if (data.class_names != ckpt.class_names || data.points != ckpt.points ||
      data.dims != ckpt.params.config.input_dim) {
    throw ConfigError("training data does not match the checkpoint (classes, points or dims differ)");
  }
  const auto [train_idx, val_idx] = stratified_split(data, cfg.validation_fraction, cfg.seed);
  if (train_idx.empty()) throw ConfigError("no training samples left after the validation split");

  std::vector<Matrix*> blocks = ckpt.params.parameters();
  const std::vector<const Matrix*> const_blocks(blocks.begin(), blocks.end());
  const std::size_t spatial = std::min<std::size_t>(3, data.dims);

  std::size_t epochs_run = 0;
  while (!ckpt.finished) {
    if (hooks.epoch_budget != 0 && epochs_run == hooks.epoch_budget) return;
    if (hooks.max_steps != 0 && ckpt.adam.step >= hooks.max_steps) return;
    const std::size_t epoch = ckpt.epoch;

    std::vector<std::size_t> order = train_idx;
    Rng shuffle_rng(derive_seed(cfg.seed, {kShuffleTag, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (hooks.max_steps != 0 && ckpt.adam.step >= hooks.max_steps) break;
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<ItemResult> items(n);
      const std::size_t batch_no = start / cfg.batch_size;
      try {
        parallel_for(n, cfg.threads, [&](std::size_t j) {
          const std::size_t s = order[start + j];
          Rng noise_rng(derive_seed(cfg.seed, {kNoiseTag, epoch, s}));
          const Matrix cloud = add_noise(data.samples[s].cloud, cfg.noise_sigma, noise_rng, spatial);
          items[j] = forward_backward(ckpt.params, const_blocks, cloud, data.samples[s].label,
                                      derive_seed(cfg.seed, {kForwardTag, epoch, s}));
        });
      } catch (const NumericError& e) {
        throw NumericError("numeric failure at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) +
                           ": " + e.what() + "; first non-finite parameter block: " +
                           first_nonfinite_param(blocks, ckpt.params));
      }

      double batch_loss = 0.0;
      for (const auto& it : items) batch_loss += it.loss;
      batch_loss /= static_cast<double>(n);
      if (!std::isfinite(batch_loss)) {
        std::size_t bad = 0;
        while (bad < n && std::isfinite(items[bad].loss)) ++bad;
        const std::string block = first_nonfinite_param(blocks, ckpt.params);
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) +
                           " (sample " + std::to_string(order[start + bad]) + ", " +
                           data.samples[order[start + bad]].source + "); first non-finite parameter block: " + block);
      }

      std::vector<Matrix> grads = std::move(items[0].grads);
      for (std::size_t j = 1; j < n; ++j) {
        for (std::size_t b = 0; b < grads.size(); ++b) {
          auto dst = grads[b].values();
          auto src = items[j].grads[b].values();
          for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
        }
      }
      const double inv = 1.0 / static_cast<double>(n);
      for (auto& g : grads) {
        for (double& v : g.values()) v *= inv;
      }
      if (const std::string block = nonfinite_block(grads, ckpt.params); !block.empty()) {
        throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no) + " in parameter block " + block);
      }
      adam_step(ckpt.adam, blocks, grads, cfg.adam());
      ckpt.step_losses.push_back(batch_loss);
      loss_sum += batch_loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = batches == 0 ? kNaN : loss_sum / static_cast<double>(batches);
    rec.steps = ckpt.adam.step;
    if (val_idx.empty()) {
      rec.val_accuracy = kNaN;
      ckpt.best_params = ckpt.params;
      ckpt.best_epoch = epoch;
    } else {
      const auto pred = predict(ckpt.params, data, val_idx, cfg.seed, cfg.threads);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < val_idx.size(); ++i) correct += pred[i] == data.samples[val_idx[i]].label;
      rec.val_accuracy = static_cast<double>(correct) / static_cast<double>(val_idx.size());
      if (rec.val_accuracy > ckpt.best_val_accuracy) {
        ckpt.best_val_accuracy = rec.val_accuracy;
        ckpt.best_params = ckpt.params;
        ckpt.best_epoch = epoch;
        ckpt.epochs_since_best = 0;
      } else {
        ++ckpt.epochs_since_best;
      }
    }
    ckpt.history.push_back(rec);
    ckpt.epoch = epoch + 1;
    ++epochs_run;
    const bool stalled = !val_idx.empty() && cfg.patience != 0 && ckpt.epochs_since_best >= cfg.patience;
    if (ckpt.epoch >= cfg.max_epochs || stalled) ckpt.finished = true;
    if (hooks.on_epoch) hooks.on_epoch(ckpt);
  }
}

Checkpoint train(const TrainConfig& config, const NetworkConfig& net, const DatasetCache& data,
                 const TrainHooks& hooks) {
  Checkpoint c = start_training(config, net, data);
  continue_training(c, data, hooks);
  return c;
}

std::vector<std::size_t> predict(const NetworkParams& params, const DatasetCache& data,
                                 std::span<const std::size_t> indices, std::uint64_t seed, std::size_t threads) {
  std::vector<std::size_t> out(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) {
    const std::size_t s = indices[i];
    const Matrix lp = predict_log_probs(params, data.samples.at(s).cloud, derive_seed(seed, {kEvalTag, s}));
    out[i] = argmax_class(lp.values());
  });
  return out;
}

Metrics evaluate(const Checkpoint& ckpt, const DatasetCache& data) {
  validate_dataset(data);
  if (data.dims != ckpt.params.config.input_dim) {
    throw ConfigError("data has " + std::to_string(data.dims) + " channels, checkpoint expects " +
                      std::to_string(ckpt.params.config.input_dim));
  }
  if (data.class_names.size() != ckpt.params.config.classes) {
    throw ConfigError("data has " + std::to_string(data.class_names.size()) + " classes, checkpoint has " +
                      std::to_string(ckpt.params.config.classes));
  }
  if (data.samples.empty()) throw ConfigError("evaluation data is empty");
  const auto all = indices_of(data);
  const auto pred = predict(ckpt.best_params, data, all, ckpt.train.seed, ckpt.train.threads);
  std::vector<std::size_t> truth(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) truth[i] = data.samples[i].label;
  return metrics_from_confusion(confusion_matrix(truth, pred, data.class_names.size()));
}

std::string format_history(const std::vector<EpochRecord>& history) {
  std::string out = "epoch train_loss val_accuracy steps\n";
  char line[128];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%zu %.10g %.6g %zu\n", r.epoch, r.train_loss, r.val_accuracy, r.steps);
    out += line;
  }
  return out;
}

}  // namespace shrinking
