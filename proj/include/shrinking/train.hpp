#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "shrinking/dataset.hpp"
#include "shrinking/metrics.hpp"
#include "shrinking/network.hpp"
#include "shrinking/optim.hpp"

namespace shrinking {

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;  // epochs without validation improvement; 0 disables early stopping
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  std::size_t threads = 1;  // workers evaluating batch items; results do not depend on it

  AdamConfig adam() const { return AdamConfig{lr, beta1, beta2, eps}; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Throws ConfigError naming the offending field.
void validate_train_config(const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;    // mean of the epoch's batch losses
  double val_accuracy = 0.0;  // NaN without a validation split
  std::size_t steps = 0;      // optimizer steps completed after this epoch
};

/// Everything needed to continue a run bit-for-bit. All randomness is
/// derived from (train.seed, epoch, sample), so the seed and epoch counter
/// are the complete RNG state.
struct Checkpoint {
  TrainConfig train;
  std::vector<std::string> class_names;
  std::size_t points = 0;
  NetworkParams params;       // current weights
  NetworkParams best_params;  // weights of the best validation epoch
  AdamState adam;
  std::size_t epoch = 0;  // epochs completed
  double best_val_accuracy = -1.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_since_best = 0;
  bool finished = false;
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
};

/// Mean of -log_probs[i, label_i] over rows. Throws ConfigError for an
/// out-of-range label.
Var nll_loss(Var log_probs, std::span<const std::size_t> labels);

/// Stratified split: from each class, round(fraction * count) samples go to
/// validation, chosen by a shuffle seeded from `seed`. Returns (train, val)
/// sample indices, each sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(const DatasetCache& data,
                                                                                 double fraction,
                                                                                 std::uint64_t seed);

struct TrainHooks {
  /// Called after every epoch with the updated checkpoint.
  std::function<void(const Checkpoint&)> on_epoch;
  /// Stop (without marking the run finished) after this many epochs in this call; 0 means no limit.
  std::size_t epoch_budget = 0;
  /// Stop once this many optimizer steps have been taken in total; 0 means no limit.
  std::size_t max_steps = 0;
};

/// Fresh run: builds the network from `net` with `train.seed`.
Checkpoint start_training(const TrainConfig& train, const NetworkConfig& net, const DatasetCache& data);

/// Runs epochs until max_epochs, early stopping, or a hook limit. Mini-batches
/// of shuffled training samples; each item is forwarded on its own tape with
/// fresh noise, gradients are averaged in item order, then one Adam step.
/// Throws NumericError naming epoch, batch and parameter block when the loss
/// or a gradient is not finite.
void continue_training(Checkpoint& ckpt, const DatasetCache& data, const TrainHooks& hooks = {});

/// Convenience: start_training + continue_training.
Checkpoint train(const TrainConfig& train, const NetworkConfig& net, const DatasetCache& data,
                 const TrainHooks& hooks = {});

/// Predicted class per sample (argmax of the log-probabilities, no noise).
std::vector<std::size_t> predict(const NetworkParams& params, const DatasetCache& data,
                                 std::span<const std::size_t> indices, std::uint64_t seed, std::size_t threads = 1);

/// Evaluates the best-validation weights on every sample of `data`.
Metrics evaluate(const Checkpoint& ckpt, const DatasetCache& data);

/// Plain-text table: epoch, train_loss, val_accuracy, steps.
std::string format_history(const std::vector<EpochRecord>& history);

}  // namespace shrinking
