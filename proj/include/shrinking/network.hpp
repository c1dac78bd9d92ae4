#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shrinking/shrinking_unit.hpp"

namespace shrinking {

/// One depth level of the unit tree.
struct LayerSpec {
  std::size_t fan_out = 1;  // units attached to every output of the previous layer
  std::size_t k = 1;
  std::size_t out_dim = 0;  // T of this layer; C is the previous layer's T
  std::optional<UnitHidden> hidden;  // defaults to default_hidden(C, T)
};

struct NetworkConfig {
  std::size_t input_dim = 3;
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> classifier_hidden;
  std::size_t classes = 10;

  std::size_t in_dim(std::size_t layer) const { return layer == 0 ? input_dim : layers[layer - 1].out_dim; }
  UnitHidden hidden_for(std::size_t layer) const;
  /// Units on depth `layer` (product of fan-outs up to it).
  std::size_t units_in_layer(std::size_t layer) const;
  std::size_t leaf_count() const { return layers.empty() ? 0 : units_in_layer(layers.size() - 1); }
  std::size_t unit_count() const;
  std::size_t descriptor_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
};

/// ShrinkingNet: fan-outs [2, 3, 2], K = [240, 48, 1], dims 3 -> 6 -> 12 -> 18,
/// classifier 18-36-46-56-46-10.
NetworkConfig shrinkingnet_config();

/// Throws ConfigError naming the first violated constraint.
void validate_config(const NetworkConfig& config);

/// Parameters for every unit of the tree (layer-major, siblings adjacent) and
/// the classifier. Units never share weights.
struct NetworkParams {
  NetworkConfig config;
  std::vector<std::vector<UnitParams>> units;
  MlpParams classifier;

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    for (auto& layer : self.units) {
      for (auto& u : layer) u.for_each_parameter(fn);
    }
    self.classifier.for_each_parameter(fn);
  }
  template <typename Fn>
  void for_each_parameter(Fn&& fn) { visit(*this, fn); }
  template <typename Fn>
  void for_each_parameter(Fn&& fn) const { visit(*this, fn); }

  std::vector<Matrix*> parameters();
  std::size_t scalar_count() const;
};

/// Human-readable name of every parameter block, in for_each_parameter order.
std::vector<std::string> parameter_labels(const NetworkParams& params);

/// Child positions from the root to unit `index` of `layer`.
std::vector<std::size_t> branch_path(const NetworkConfig& config, std::size_t layer, std::size_t index);

/// Glorot-initialized network. Every unit draws from a stream derived from
/// `seed` and its branch path, so growing one fan-out leaves existing
/// branches' initial weights untouched.
NetworkParams build_network(const NetworkConfig& config, std::uint64_t seed);

/// Channel-wise maximum over leaf outputs (each 1 x T).
Var global_descriptor(std::span<const Var> leaves);
Matrix global_descriptor(std::span<const Matrix> leaves);

struct NetworkOutput {
  Var log_probs;   // 1 x classes
  Var descriptor;  // 1 x T_final
  /// Output shape (rows, cols) of every unit, layer-major.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> unit_shapes;
};

/// Breadth-first evaluation of the tree, leaf max-pooling, classifier MLP and
/// log-softmax. Clustering inside unit u draws from derive_seed(forward_seed, path(u)).
NetworkOutput network_forward(const NetworkParams& params, Var cloud, std::uint64_t forward_seed,
                              const LloydOptions& lloyd = {});

/// Convenience evaluation on a private tape.
Matrix predict_log_probs(const NetworkParams& params, const Matrix& cloud, std::uint64_t forward_seed);

}  // namespace shrinking
