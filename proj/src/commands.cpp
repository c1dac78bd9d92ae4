#include "shrinking/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <random>

#include "json.hpp"
#include "shrinking/binary_io.hpp"
#include "shrinking/checkpoint.hpp"
#include "shrinking/errors.hpp"
#include "shrinking/modelnet.hpp"
#include "shrinking/shrinking_unit.hpp"

namespace shrinking {
namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

void print_split_counts(const DatasetCache& train, const DatasetCache& test, std::ostream& out) {
  const auto tr = class_counts(train);
  const auto te = class_counts(test);
  std::size_t width = 5;
  for (const auto& n : train.class_names) width = std::max(width, n.size());
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %8s %8s\n", static_cast<int>(width), "class", "train", "test");
  out << line;
  for (std::size_t c = 0; c < train.class_names.size(); ++c) {
    std::snprintf(line, sizeof line, "%-*s %8zu %8zu\n", static_cast<int>(width), train.class_names[c].c_str(),
                  tr[c], c < te.size() ? te[c] : 0);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-*s %8zu %8zu\n", static_cast<int>(width), "total", train.samples.size(),
                test.samples.size());
  out << line;
}

bool same_network(const NetworkConfig& a, const NetworkConfig& b) {
  if (a.input_dim != b.input_dim || a.classes != b.classes || a.classifier_hidden != b.classifier_hidden ||
      a.layers.size() != b.layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const LayerSpec& x = a.layers[l];
    const LayerSpec& y = b.layers[l];
    if (x.fan_out != y.fan_out || x.k != y.k || x.out_dim != y.out_dim || !(a.hidden_for(l) == b.hidden_for(l))) {
      return false;
    }
  }
  return true;
}

void check_cache_matches(const RunConfig& config, const DatasetCache& data, const std::string& path) {
  if (config.data.points < config.network.layers.front().k) {
    throw ConfigError("config key 'data.points' must be at least network.layers[0].k = " +
                      std::to_string(config.network.layers.front().k));
  }
  if (data.dims != config.data.dims) {
    throw ConfigError("config key 'data.dims' is " + std::to_string(config.data.dims) + " but " + path + " has " +
                      std::to_string(data.dims) + " channels");
  }
  if (data.points != config.data.points) {
    throw ConfigError("config key 'data.points' is " + std::to_string(config.data.points) + " but " + path +
                      " has " + std::to_string(data.points) + " points per sample");
  }
  if (data.class_names.size() != config.network.classes) {
    throw ConfigError("config key 'network.classes' is " + std::to_string(config.network.classes) + " but " + path +
                      " has " + std::to_string(data.class_names.size()) + " classes");
  }
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (double& v : m.values()) v = d(rng);
  return m;
}

// Nonzero lambda, b and MLP biases so that every parameter receives a gradient.
UnitParams randomized_unit(const GradcheckSuiteOptions& o, const UnitHidden& hidden, Rng& rng) {
  UnitParams p = make_unit(o.in_dim, o.out_dim, o.k, hidden, rng);
  p.lambda(0, 0) = 0.8;
  p.bias = random_matrix(1, o.out_dim, rng, -0.3, 0.3);
  for (MlpParams* mlp : {&p.self_gate, &p.edge_kernel, &p.self_kernel, &p.normalizer, &p.gate_self, &p.gate_up}) {
    for (auto& l : mlp->layers) l.bias = random_matrix(1, l.bias.cols(), rng, -0.2, 0.2);
  }
  // keeps |N_i| M(beta_i) clear of the denominator floor, where the gradient is cut
  p.normalizer.layers.back().bias(0, 0) = 1.5;
  return p;
}

}  // namespace

void cmd_preprocess(const RunConfig& config, std::ostream& out) {
  if (config.data.modelnet_dir.empty()) throw ConfigError("config key 'data.modelnet_dir' is empty");
  PreprocessOptions options;
  options.points = config.data.points;
  options.dims = config.data.dims;
  options.seed = config.seed;
  options.classes = config.data.classes;
  const PreprocessResult result = preprocess_directory(config.data.modelnet_dir, options);
  cache_write(result.train, config.data.train_cache);
  cache_write(result.test, config.data.test_cache);
  out << "sampled " << options.points << " x " << options.dims << " clouds from " << config.data.modelnet_dir << "\n";
  print_split_counts(result.train, result.test, out);
  for (const auto& f : result.failures) out << "skipped " << f.file.string() << ": " << f.reason << "\n";
  out << "wrote " << config.data.train_cache << " and " << config.data.test_cache << "\n";
}

void cmd_synth(const RunConfig& config, std::ostream& out) {
  SynthOptions options;
  options.classes = config.data.synthetic.shapes;
  options.points = config.data.points;
  options.dims = config.data.dims;
  options.seed = config.seed;
  options.per_class = config.data.synthetic.train_per_class;
  options.split = "train";
  const DatasetCache train = synth_dataset(options);
  options.per_class = config.data.synthetic.test_per_class;
  options.split = "test";
  const DatasetCache test = synth_dataset(options);
  cache_write(train, config.data.train_cache);
  cache_write(test, config.data.test_cache);
  out << "generated " << options.points << " x " << options.dims << " synthetic clouds\n";
  print_split_counts(train, test, out);
  out << "wrote " << config.data.train_cache << " and " << config.data.test_cache << "\n";
}

void cmd_train(const RunConfig& config, bool resume, std::ostream& out) {
  const std::string resolved = dump_run_config(config);
  out << resolved;
  write_text(config.output.resolved_config, resolved);

  const DatasetCache data = cache_read(config.data.train_cache);
  check_cache_matches(config, data, config.data.train_cache);

  const std::filesystem::path ckpt_path = config.output.checkpoint;
  Checkpoint ckpt;
  if (resume && std::filesystem::exists(ckpt_path)) {
    ckpt = load_checkpoint(ckpt_path);
    TrainConfig a = ckpt.train;
    a.threads = config.train.threads;  // results do not depend on the worker count
    if (!(a == config.train) || !same_network(ckpt.params.config, config.network) ||
        ckpt.class_names != data.class_names || ckpt.points != data.points) {
      throw ConfigError("cannot resume " + ckpt_path.string() + ": it was written by a different config");
    }
    ckpt.train.threads = config.train.threads;
    out << "resuming after epoch " << ckpt.epoch << "\n";
  } else {
    ckpt = start_training(config.train, config.network, data);
  }

  TrainHooks hooks;
  hooks.on_epoch = [&](const Checkpoint& c) {
    const EpochRecord& r = c.history.back();
    out << "epoch " << r.epoch << "  loss " << fmt("%.6f", r.train_loss) << "  val_acc "
        << (std::isnan(r.val_accuracy) ? std::string("n/a") : fmt("%.4f", r.val_accuracy)) << "\n";
    out.flush();
    save_checkpoint(c, ckpt_path);
    write_text(config.output.history, format_history(c.history));
  };
  if (ckpt.finished) {
    out << "run already finished at epoch " << ckpt.epoch << "\n";
    return;
  }
  continue_training(ckpt, data, hooks);
  save_checkpoint(ckpt, ckpt_path);
  write_text(config.output.history, format_history(ckpt.history));
  out << "best epoch " << ckpt.best_epoch << " (validation accuracy "
      << (ckpt.best_val_accuracy < 0.0 ? std::string("n/a") : fmt("%.4f", ckpt.best_val_accuracy)) << ")\n";
  out << "wrote " << ckpt_path.string() << " and " << config.output.history << "\n";
}

void cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& cache,
              const std::optional<std::filesystem::path>& metrics_json, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const DatasetCache data = cache_read(cache);
  if (data.class_names != ckpt.class_names) {
    throw ConfigError(cache.string() + " has a different class table than " + checkpoint.string());
  }
  const Metrics m = evaluate(ckpt, data);
  out << format_report(m, ckpt.class_names);
  if (metrics_json) {
    write_text(*metrics_json, metrics_to_json(m, ckpt.class_names));
    out << "wrote " << metrics_json->string() << "\n";
  }
}

std::string metrics_to_json(const Metrics& metrics, const std::vector<std::string>& class_names) {
  using json = nlohmann::ordered_json;
  auto number = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  json doc;
  doc["total"] = metrics.total;
  doc["accuracy"] = metrics.accuracy;
  doc["micro_precision"] = metrics.micro_precision;
  json classes = json::array();
  for (std::size_t c = 0; c < metrics.per_class.size(); ++c) {
    const ClassStats& s = metrics.per_class[c];
    classes.push_back({{"name", c < class_names.size() ? class_names[c] : std::to_string(c)},
                       {"support", s.support},
                       {"predicted", s.predicted},
                       {"precision", number(s.precision)},
                       {"recall", number(s.recall)},
                       {"f1", number(s.f1)}});
  }
  doc["per_class"] = classes;
  doc["confusion"] = metrics.confusion;
  return doc.dump(2) + "\n";
}

std::vector<StageCheck> gradcheck_suite(const GradcheckSuiteOptions& o) {
  if (o.points < o.k) throw ConfigError("gradcheck needs points >= k");
  if (!(o.tolerance > 0.0)) throw ConfigError("gradcheck tolerance must be positive");
  Rng rng(o.seed);
  GradCheckOptions fd;
  fd.analytic_bias = o.analytic_bias;

  const std::size_t n = o.points;
  const std::size_t c = o.in_dim;
  const std::size_t t = o.out_dim;
  std::vector<StageCheck> results;
  auto record = [&](const std::string& name, const LossBuilder& loss, const std::vector<Matrix*>& params) {
    StageCheck s{name, finite_diff_check(loss, params, fd), false};
    s.passed = s.report.max_rel_error <= o.tolerance;
    results.push_back(std::move(s));
  };

  {
    // stages on a unit with small hidden widths
    UnitParams p = randomized_unit(o, UnitHidden{{5}, {6, 4}, {5}, {4}, {5}, {4}}, rng);
    Matrix pts = random_matrix(n, c, rng, -1.0, 1.0);
    Matrix up_in = random_matrix(n, t, rng, 0.1, 0.9);
    const ClusterAssignment regions = cluster_regions(pts, o.k, rng);
    std::vector<std::size_t> argmax;
    {
      Tape probe;
      maxpool_regions(probe.constant(up_in), regions, &argmax);
    }
    const Matrix wc = random_matrix(n, c, rng, -1.0, 1.0);
    const Matrix wt = random_matrix(n, t, rng, -1.0, 1.0);
    const Matrix wk = random_matrix(o.k, t, rng, -1.0, 1.0);
    std::vector<Matrix*> unit_params;
    p.for_each_parameter([&](Matrix& m) { unit_params.push_back(&m); });

    std::vector<Matrix*> params{&pts};
    params.insert(params.end(), unit_params.begin(), unit_params.end());
    record("self_correlation",
           [&](Tape& tp) { return ad::sum_all(ad::mul(self_correlation(p, tp.parameter(pts)), tp.constant(wc))); },
           params);
    record("kmeans_conv",
           [&](Tape& tp) {
             return ad::sum_all(ad::mul(kmeans_conv(p, tp.parameter(pts), regions), tp.constant(wt)));
           },
           params);
    params.push_back(&up_in);
    record("aggregate",
           [&](Tape& tp) {
             return ad::sum_all(ad::mul(aggregate(p, tp.parameter(pts), tp.parameter(up_in)), tp.constant(wt)));
           },
           params);
    record("maxpool",
           [&](Tape& tp) {
             return ad::sum_all(
                 ad::mul(maxpool_regions(tp.parameter(up_in), regions, nullptr, &argmax), tp.constant(wk)));
           },
           {&up_in});
  }

  {
    const std::size_t classes = 4;
    const std::vector<std::size_t> widths{t, 2 * t, t + 2, classes};
    MlpParams mlp = make_mlp(widths, rng);
    for (auto& l : mlp.layers) l.bias = random_matrix(1, l.bias.cols(), rng, -0.2, 0.2);
    Matrix descriptors = random_matrix(3, t, rng, -1.0, 1.0);
    std::vector<std::size_t> labels;
    std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
    for (std::size_t i = 0; i < descriptors.rows(); ++i) labels.push_back(pick(rng));
    std::vector<Matrix*> params{&descriptors};
    mlp.for_each_parameter([&](Matrix& m) { params.push_back(&m); });
    record("classifier",
           [&](Tape& tp) {
             return nll_loss(ad::log_softmax_rows(mlp_apply(tp, mlp, tp.parameter(descriptors))), labels);
           },
           params);
  }

  {
    UnitParams p = randomized_unit(o, default_hidden(c, t), rng);
    Matrix pts = random_matrix(n, c, rng, -1.0, 1.0);
    const Matrix wk = random_matrix(o.k, t, rng, -1.0, 1.0);
    Tape probe;
    Rng crng(derive_seed(o.seed, {1}));
    const UnitOutput base = unit_forward(p, probe.constant(pts), crng);
    const ClusterAssignment frozen = base.trace.assignment;
    const std::vector<std::size_t> argmax = base.trace.argmax;
    std::vector<Matrix*> params{&pts};
    p.for_each_parameter([&](Matrix& m) { params.push_back(&m); });
    record("unit",
           [&](Tape& tp) {
             UnitForwardOptions opts;
             opts.frozen_assignment = &frozen;
             opts.frozen_argmax = &argmax;
             Rng unused(0);
             return ad::sum_all(ad::mul(unit_forward(p, tp.parameter(pts), unused, opts).pooled, tp.constant(wk)));
           },
           params);
  }
  return results;
}

bool cmd_gradcheck(const GradcheckSuiteOptions& options, std::ostream& out) {
  out << "gradient check N=" << options.points << " C=" << options.in_dim << " T=" << options.out_dim
      << " K=" << options.k << " seed=" << options.seed << " tolerance " << fmt("%.1e", options.tolerance) << "\n";
  bool ok = true;
  for (const StageCheck& s : gradcheck_suite(options)) {
    char line[256];
    std::snprintf(line, sizeof line, "%-17s max rel error %.3e over %6zu entries  %s\n", s.name.c_str(),
                  s.report.max_rel_error, s.report.entries_checked, s.passed ? "PASS" : "FAIL");
    out << line;
    ok = ok && s.passed;
  }
  return ok;
}

}  // namespace shrinking
