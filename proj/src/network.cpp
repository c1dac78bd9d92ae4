#include "shrinking/network.hpp"

#include <string>

#include "shrinking/errors.hpp"

namespace shrinking {

UnitHidden NetworkConfig::hidden_for(std::size_t layer) const {
  const auto& spec = layers.at(layer);
  return spec.hidden ? *spec.hidden : default_hidden(in_dim(layer), spec.out_dim);
}

std::size_t NetworkConfig::units_in_layer(std::size_t layer) const {
  std::size_t n = 1;
  for (std::size_t l = 0; l <= layer; ++l) n *= layers.at(l).fan_out;
  return n;
}

std::size_t NetworkConfig::unit_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) total += units_in_layer(l);
  return total;
}

NetworkConfig shrinkingnet_config() {
  NetworkConfig c;
  c.input_dim = 3;
  c.layers = {LayerSpec{2, 240, 6, std::nullopt}, LayerSpec{3, 48, 12, std::nullopt},
              LayerSpec{2, 1, 18, std::nullopt}};
  c.classifier_hidden = {36, 46, 56, 46};
  c.classes = 10;
  return c;
}

void validate_config(const NetworkConfig& c) {
  auto fail = [](const std::string& what) { throw ConfigError("network config: " + what); };
  if (c.input_dim == 0) fail("input_dim must be >= 1");
  if (c.layers.empty()) fail("at least one layer is required");
  if (c.classes < 2) fail("classes must be >= 2");
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    const auto& s = c.layers[l];
    const std::string at = "layer " + std::to_string(l) + ": ";
    if (s.fan_out == 0) fail(at + "fan_out must be >= 1");
    if (s.k == 0) fail(at + "K must be >= 1");
    if (s.out_dim <= c.in_dim(l)) {
      fail(at + "out_dim T=" + std::to_string(s.out_dim) + " must exceed in_dim C=" + std::to_string(c.in_dim(l)));
    }
    if (l > 0 && s.k >= c.layers[l - 1].k) {
      fail(at + "K must strictly decrease (" + std::to_string(c.layers[l - 1].k) + " -> " + std::to_string(s.k) + ")");
    }
    if (s.hidden) {
      for (const auto* h : {&s.hidden->self_gate, &s.hidden->edge_kernel, &s.hidden->self_kernel,
                            &s.hidden->normalizer, &s.hidden->gate_self, &s.hidden->gate_up}) {
        for (std::size_t w : *h) {
          if (w == 0) fail(at + "hidden widths must be >= 1");
        }
      }
    }
  }
  if (c.layers.back().k != 1) fail("final layer K must be 1, got " + std::to_string(c.layers.back().k));
  for (std::size_t w : c.classifier_hidden) {
    if (w == 0) fail("classifier hidden widths must be >= 1");
  }
}

std::vector<Matrix*> NetworkParams::parameters() {
  std::vector<Matrix*> out;
  for_each_parameter([&](Matrix& m) { out.push_back(&m); });
  return out;
}

std::size_t NetworkParams::scalar_count() const {
  std::size_t n = 0;
  for_each_parameter([&](const Matrix& m) { n += m.size(); });
  return n;
}

std::vector<std::size_t> branch_path(const NetworkConfig& config, std::size_t layer, std::size_t index) {
  std::vector<std::size_t> path(layer + 1);
  for (std::size_t l = layer + 1; l-- > 0;) {
    path[l] = index % config.layers[l].fan_out;
    index /= config.layers[l].fan_out;
  }
  return path;
}

NetworkParams build_network(const NetworkConfig& config, std::uint64_t seed) {
  validate_config(config);
  NetworkParams p;
  p.config = config;
  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    const auto& spec = config.layers[l];
    const UnitHidden hidden = config.hidden_for(l);
    std::vector<UnitParams> layer;
    for (std::size_t u = 0; u < config.units_in_layer(l); ++u) {
      Rng rng(derive_seed(seed, branch_path(config, l, u)));
      layer.push_back(make_unit(config.in_dim(l), spec.out_dim, spec.k, hidden, rng));
    }
    p.units.push_back(std::move(layer));
  }
  std::vector<std::size_t> widths{config.descriptor_dim()};
  widths.insert(widths.end(), config.classifier_hidden.begin(), config.classifier_hidden.end());
  widths.push_back(config.classes);
  Rng rng(derive_seed(seed, {0xC1A55ULL}));
  p.classifier = make_mlp(widths, rng);
  return p;
}

Var global_descriptor(std::span<const Var> leaves) {
  if (leaves.empty()) throw ConfigError("global_descriptor: no leaf outputs");
  const std::size_t t = leaves.front().cols();
  for (const Var& v : leaves) {
    if (v.rows() != 1 || v.cols() != t) {
      throw ConfigError("global_descriptor: leaves must all be 1x" + std::to_string(t) + ", got " +
                        shape_string(v.value()));
    }
  }
  Var stacked = ad::concat_rows(leaves);
  const std::vector<std::size_t> one_segment(leaves.size(), 0);
  return ad::segment_max(stacked, one_segment, 1, nullptr);
}

Matrix global_descriptor(std::span<const Matrix> leaves) {
  Tape tape;
  std::vector<Var> vars;
  for (const Matrix& m : leaves) vars.push_back(tape.constant(m));
  return global_descriptor(vars).value();
}

NetworkOutput network_forward(const NetworkParams& params, Var cloud, std::uint64_t forward_seed,
                              const LloydOptions& lloyd) {
  const NetworkConfig& config = params.config;
  if (cloud.cols() != config.input_dim) {
    throw ConfigError("network input has " + std::to_string(cloud.cols()) + " channels, config expects " +
                      std::to_string(config.input_dim));
  }
  if (cloud.rows() < config.layers.front().k) {
    throw ConfigError("input cloud has " + std::to_string(cloud.rows()) + " points, first layer needs at least K=" +
                      std::to_string(config.layers.front().k));
  }
  NetworkOutput out;
  UnitForwardOptions options;
  options.lloyd = lloyd;
  std::vector<Var> inputs{cloud};
  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    const std::size_t fan = config.layers[l].fan_out;
    const auto& layer = params.units.at(l);
    if (layer.size() != inputs.size() * fan) throw ConfigError("network params do not match the config tree");
    std::vector<Var> outputs;
    out.unit_shapes.emplace_back();
    for (std::size_t u = 0; u < layer.size(); ++u) {
      Rng rng(derive_seed(forward_seed, branch_path(config, l, u)));
      Var y = unit_forward(layer[u], inputs[u / fan], rng, options).pooled;
      if (y.rows() != config.layers[l].k || y.cols() != config.layers[l].out_dim) {
        throw ConfigError("shape chain broken at layer " + std::to_string(l) + ": unit produced " +
                          shape_string(y.value()));
      }
      out.unit_shapes.back().emplace_back(y.rows(), y.cols());
      outputs.push_back(y);
    }
    inputs = std::move(outputs);
  }
  out.descriptor = global_descriptor(inputs);
  Var logits = mlp_apply(*cloud.tape, params.classifier, out.descriptor);
  out.log_probs = ad::log_softmax_rows(logits);
  return out;
}

Matrix predict_log_probs(const NetworkParams& params, const Matrix& cloud, std::uint64_t forward_seed) {
  Tape tape;
  return network_forward(params, tape.constant(cloud), forward_seed).log_probs.value();
}

namespace {

void label_mlp(std::vector<std::string>& out, const std::string& prefix, const MlpParams& mlp) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    out.push_back(prefix + ".layer" + std::to_string(l) + ".weight");
    out.push_back(prefix + ".layer" + std::to_string(l) + ".bias");
  }
}

}  // namespace

std::vector<std::string> parameter_labels(const NetworkParams& params) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < params.units.size(); ++l) {
    for (std::size_t i = 0; i < params.units[l].size(); ++i) {
      const UnitParams& u = params.units[l][i];
      const std::string p = "unit[" + std::to_string(l) + "][" + std::to_string(i) + "]";
      label_mlp(out, p + ".f", u.self_gate);
      out.push_back(p + ".lambda");
      label_mlp(out, p + ".F", u.edge_kernel);
      label_mlp(out, p + ".W", u.self_kernel);
      label_mlp(out, p + ".M", u.normalizer);
      out.push_back(p + ".b");
      label_mlp(out, p + ".f1", u.gate_self);
      label_mlp(out, p + ".f2", u.gate_up);
    }
  }
  label_mlp(out, "classifier", params.classifier);
  return out;
}

}  // namespace shrinking
