#include "shrinking/config_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "shrinking/errors.hpp"

namespace shrinking {
namespace {

using json = nlohmann::ordered_json;

std::string join_key(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string key(const std::string& k) const { return join_key(path_, k); }

  void size(const std::string& k, std::size_t& out) {
    if (const json* v = get(k)) out = as_size(*v, key(k));
  }
  void u64(const std::string& k, std::uint64_t& out) {
    if (const json* v = get(k)) out = as_u64(*v, key(k));
  }
  void number(const std::string& k, double& out) {
    if (const json* v = get(k)) out = as_number(*v, key(k));
  }
  void string(const std::string& k, std::string& out) {
    if (const json* v = get(k)) out = as_string(*v, key(k));
  }
  void sizes(const std::string& k, std::vector<std::size_t>& out) {
    if (const json* v = get(k)) out = as_sizes(*v, key(k));
  }
  void strings(const std::string& k, std::vector<std::string>& out) {
    if (const json* v = get(k)) {
      if (!v->is_array()) throw ConfigError("config key '" + key(k) + "' must be an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_string((*v)[i], key(k) + "[" + std::to_string(i) + "]"));
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + key(it.key()) + "'");
    }
  }

  static std::uint64_t as_u64(const json& v, const std::string& key) {
    if (!v.is_number_unsigned()) throw ConfigError("config key '" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
  }
  static std::size_t as_size(const json& v, const std::string& key) {
    return static_cast<std::size_t>(as_u64(v, key));
  }
  static double as_number(const json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError("config key '" + key + "' must be finite");
    return d;
  }
  static std::string as_string(const json& v, const std::string& key) {
    if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
    return v.get<std::string>();
  }
  static std::vector<std::size_t> as_sizes(const json& v, const std::string& key) {
    if (!v.is_array()) throw ConfigError("config key '" + key + "' must be an array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_size(v[i], key + "[" + std::to_string(i) + "]"));
    return out;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* const kHiddenKeys[] = {"self_gate", "edge_kernel", "self_kernel", "normalizer", "gate_self", "gate_up"};

std::vector<std::size_t>& hidden_field(UnitHidden& h, std::size_t i) {
  std::vector<std::size_t>* fields[] = {&h.self_gate, &h.edge_kernel, &h.self_kernel,
                                        &h.normalizer, &h.gate_self, &h.gate_up};
  return *fields[i];
}

void parse_data(Section& s, DataSection& d) {
  s.string("modelnet_dir", d.modelnet_dir);
  s.string("train_cache", d.train_cache);
  s.string("test_cache", d.test_cache);
  s.size("points", d.points);
  s.size("dims", d.dims);
  s.number("noise_sigma", d.noise_sigma);
  s.strings("classes", d.classes);
  if (const json* v = s.get("synthetic")) {
    Section syn(*v, s.key("synthetic"));
    std::vector<std::string> names;
    syn.strings("shapes", names);
    if (syn.get("shapes") != nullptr) {
      d.synthetic.shapes.clear();
      for (const auto& n : names) {
        try {
          d.synthetic.shapes.push_back(shape_from_name(n));
        } catch (const ConfigError& e) {
          throw ConfigError("config key '" + syn.key("shapes") + "': " + e.what());
        }
      }
    }
    syn.size("train_per_class", d.synthetic.train_per_class);
    syn.size("test_per_class", d.synthetic.test_per_class);
    syn.finish();
  }
}

void parse_network(Section& s, NetworkConfig& n, std::size_t input_dim) {
  s.size("classes", n.classes);
  s.sizes("classifier_hidden", n.classifier_hidden);
  if (const json* v = s.get("layers")) {
    if (!v->is_array()) throw ConfigError("config key '" + s.key("layers") + "' must be an array");
    n.layers.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      Section ls((*v)[i], s.key("layers") + "[" + std::to_string(i) + "]");
      LayerSpec spec;
      ls.size("fan_out", spec.fan_out);
      for (const char* required : {"k", "out_dim"}) {
        if (!(*v)[i].contains(required)) throw ConfigError("config key '" + ls.key(required) + "' is required");
      }
      ls.size("k", spec.k);
      ls.size("out_dim", spec.out_dim);
      if (const json* h = ls.get("hidden")) {
        Section hs(*h, ls.key("hidden"));
        // entries left out keep the default widths for this layer's (C, T)
        const std::size_t c = i == 0 ? input_dim : n.layers[i - 1].out_dim;
        UnitHidden hidden = default_hidden(c, spec.out_dim);
        for (std::size_t f = 0; f < 6; ++f) hs.sizes(kHiddenKeys[f], hidden_field(hidden, f));
        hs.finish();
        spec.hidden = hidden;
      }
      ls.finish();
      n.layers.push_back(std::move(spec));
    }
  }
}

void parse_train(Section& s, TrainConfig& t) {
  s.number("lr", t.lr);
  s.number("beta1", t.beta1);
  s.number("beta2", t.beta2);
  s.number("eps", t.eps);
  s.size("batch_size", t.batch_size);
  s.size("max_epochs", t.max_epochs);
  s.size("patience", t.patience);
  s.number("validation_fraction", t.validation_fraction);
  s.size("threads", t.threads);
}

void parse_output(Section& s, OutputSection& o) {
  s.string("checkpoint", o.checkpoint);
  s.string("history", o.history);
  s.string("resolved_config", o.resolved_config);
}

// Puts arrays of scalars on one line; dump(2) gives every element its own.
std::string compact_arrays(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (ch == '"') {
      const std::size_t start = i++;
      while (i < text.size() && text[i] != '"') i += text[i] == '\\' ? 2 : 1;
      out.append(text, start, i - start + 1);
      continue;
    }
    if (ch != '[') {
      out += ch;
      continue;
    }
    // look for the closing bracket without passing a nested container
    std::size_t j = i + 1;
    bool flat = true;
    while (j < text.size() && text[j] != ']') {
      if (text[j] == '[' || text[j] == '{') {
        flat = false;
        break;
      }
      if (text[j] == '"') {
        ++j;
        while (j < text.size() && text[j] != '"') j += text[j] == '\\' ? 2 : 1;
      }
      ++j;
    }
    if (!flat || j >= text.size()) {
      out += ch;
      continue;
    }
    out += '[';
    for (std::size_t k = i + 1; k < j; ++k) {
      if (text[k] == '"') {
        const std::size_t start = k++;
        while (k < j && text[k] != '"') k += text[k] == '\\' ? 2 : 1;
        out.append(text, start, k - start + 1);
      } else if (text[k] == ',') {
        out += ", ";
      } else if (!std::isspace(static_cast<unsigned char>(text[k]))) {
        out += text[k];
      }
    }
    out += ']';
    i = j;
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig config;
  Section root(doc, "");
  root.u64("seed", config.seed);
  if (const json* v = root.get("data")) {
    Section s(*v, "data");
    parse_data(s, config.data);
    s.finish();
  }
  if (const json* v = root.get("network")) {
    Section s(*v, "network");
    parse_network(s, config.network, config.data.dims);
    s.finish();
  }
  if (const json* v = root.get("train")) {
    Section s(*v, "train");
    parse_train(s, config.train);
    s.finish();
  }
  if (const json* v = root.get("output")) {
    Section s(*v, "output");
    parse_output(s, config.output);
    s.finish();
  }
  root.finish();
  finalize_run_config(config);
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_run_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void finalize_run_config(RunConfig& config) {
  DataSection& d = config.data;
  auto fail = [](const std::string& key, const std::string& what) {
    throw ConfigError("config key '" + key + "' " + what);
  };
  if (d.dims != 3 && d.dims != 6) fail("data.dims", "must be 3 or 6");
  if (d.points == 0) fail("data.points", "must be >= 1");
  if (d.noise_sigma < 0.0) fail("data.noise_sigma", "must be >= 0");
  if (d.synthetic.shapes.empty()) fail("data.synthetic.shapes", "must not be empty");
  if (std::set<Shape>(d.synthetic.shapes.begin(), d.synthetic.shapes.end()).size() != d.synthetic.shapes.size()) {
    fail("data.synthetic.shapes", "must not repeat a shape");
  }
  if (d.synthetic.train_per_class == 0) fail("data.synthetic.train_per_class", "must be >= 1");
  if (d.synthetic.test_per_class == 0) fail("data.synthetic.test_per_class", "must be >= 1");

  NetworkConfig& n = config.network;
  n.input_dim = d.dims;
  for (std::size_t l = 0; l < n.layers.size(); ++l) {
    LayerSpec& spec = n.layers[l];
    const std::string key = "network.layers[" + std::to_string(l) + "]";
    if (spec.out_dim == 0) fail(key + ".out_dim", "must be >= 1");
    if (n.in_dim(l) >= spec.out_dim) {
      fail(key + ".out_dim", "must exceed the layer's input width " + std::to_string(n.in_dim(l)));
    }
    if (!spec.hidden) spec.hidden = default_hidden(n.in_dim(l), spec.out_dim);
    for (std::size_t f = 0; f < 6; ++f) {
      for (std::size_t w : hidden_field(*spec.hidden, f)) {
        if (w == 0) fail(key + ".hidden." + kHiddenKeys[f], "widths must be >= 1");
      }
    }
  }
  for (std::size_t w : n.classifier_hidden) {
    if (w == 0) fail("network.classifier_hidden", "widths must be >= 1");
  }
  validate_config(n);

  config.train.seed = config.seed;
  config.train.noise_sigma = d.noise_sigma;
  validate_train_config(config.train);
}

std::string dump_run_config(const RunConfig& config) {
  json doc;
  doc["seed"] = config.seed;

  const DataSection& d = config.data;
  json data;
  data["modelnet_dir"] = d.modelnet_dir;
  data["train_cache"] = d.train_cache;
  data["test_cache"] = d.test_cache;
  data["points"] = d.points;
  data["dims"] = d.dims;
  data["noise_sigma"] = d.noise_sigma;
  data["classes"] = d.classes;
  json shapes = json::array();
  for (Shape s : d.synthetic.shapes) shapes.push_back(shape_name(s));
  data["synthetic"] = {{"shapes", shapes},
                       {"train_per_class", d.synthetic.train_per_class},
                       {"test_per_class", d.synthetic.test_per_class}};
  doc["data"] = data;

  const NetworkConfig& n = config.network;
  json layers = json::array();
  for (std::size_t l = 0; l < n.layers.size(); ++l) {
    const LayerSpec& spec = n.layers[l];
    UnitHidden h = n.hidden_for(l);
    json hidden;
    for (std::size_t f = 0; f < 6; ++f) hidden[kHiddenKeys[f]] = hidden_field(h, f);
    layers.push_back({{"fan_out", spec.fan_out}, {"k", spec.k}, {"out_dim", spec.out_dim}, {"hidden", hidden}});
  }
  doc["network"] = {{"layers", layers}, {"classifier_hidden", n.classifier_hidden}, {"classes", n.classes}};

  const TrainConfig& t = config.train;
  doc["train"] = {{"lr", t.lr},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"eps", t.eps},
                  {"batch_size", t.batch_size},
                  {"max_epochs", t.max_epochs},
                  {"patience", t.patience},
                  {"validation_fraction", t.validation_fraction},
                  {"threads", t.threads}};

  doc["output"] = {{"checkpoint", config.output.checkpoint},
                   {"history", config.output.history},
                   {"resolved_config", config.output.resolved_config}};
  return compact_arrays(doc.dump(2)) + "\n";
}

}  // namespace shrinking
