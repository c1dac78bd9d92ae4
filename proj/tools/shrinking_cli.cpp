#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "shrinking/commands.hpp"
#include "shrinking/errors.hpp"

using namespace shrinking;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> modelnet_dir, train_cache, test_cache, checkpoint, history;
  std::optional<std::size_t> points, dims, per_class, test_per_class, threads;
  std::optional<std::vector<std::string>> shapes;
};

void add_config_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run config (defaults apply to missing keys)");
  cmd->add_option("--seed", o.seed, "overrides seed");
}

void add_cache_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--train-cache", o.train_cache, "overrides data.train_cache");
  cmd->add_option("--test-cache", o.test_cache, "overrides data.test_cache");
  cmd->add_option("--points", o.points, "overrides data.points");
  cmd->add_option("--dims", o.dims, "overrides data.dims (3 or 6)");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.modelnet_dir) c.data.modelnet_dir = *o.modelnet_dir;
  if (o.train_cache) c.data.train_cache = *o.train_cache;
  if (o.test_cache) c.data.test_cache = *o.test_cache;
  if (o.points) c.data.points = *o.points;
  if (o.dims) c.data.dims = *o.dims;
  if (o.per_class) c.data.synthetic.train_per_class = *o.per_class;
  if (o.test_per_class) c.data.synthetic.test_per_class = *o.test_per_class;
  if (o.shapes) {
    c.data.synthetic.shapes.clear();
    for (const auto& s : *o.shapes) c.data.synthetic.shapes.push_back(shape_from_name(s));
  }
  if (o.checkpoint) c.output.checkpoint = *o.checkpoint;
  if (o.history) c.output.history = *o.history;
  if (o.threads) c.train.threads = *o.threads;
  finalize_run_config(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shrinking-unit point cloud classifier"};
  app.require_subcommand(1);
  Overrides o;

  auto* preprocess = app.add_subcommand("preprocess", "sample OFF meshes into train/test caches");
  add_config_options(preprocess, o);
  add_cache_options(preprocess, o);
  preprocess->add_option("--data-dir", o.modelnet_dir, "overrides data.modelnet_dir");

  auto* synth = app.add_subcommand("synth", "generate synthetic sphere/cube/cylinder caches");
  add_config_options(synth, o);
  add_cache_options(synth, o);
  synth->add_option("--shapes", o.shapes, "overrides data.synthetic.shapes");
  synth->add_option("--per-class", o.per_class, "overrides data.synthetic.train_per_class");
  synth->add_option("--test-per-class", o.test_per_class, "overrides data.synthetic.test_per_class");

  bool resume = false;
  auto* train = app.add_subcommand("train", "train a network on data.train_cache");
  add_config_options(train, o);
  add_cache_options(train, o);
  train->add_option("--checkpoint", o.checkpoint, "overrides output.checkpoint");
  train->add_option("--history", o.history, "overrides output.history");
  train->add_option("--threads", o.threads, "overrides train.threads");
  train->add_flag("--resume", resume, "continue an existing checkpoint");

  std::string eval_ckpt, eval_cache;
  std::optional<std::string> metrics_json;
  auto* eval = app.add_subcommand("eval", "report accuracy and per-class metrics");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint written by train")->required();
  eval->add_option("--cache", eval_cache, "dataset cache to evaluate")->required();
  eval->add_option("--metrics-json", metrics_json, "also write the metrics as JSON");

  GradcheckSuiteOptions gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gradcheck->add_option("--points", gc.points, "N")->capture_default_str();
  gradcheck->add_option("--in-dim", gc.in_dim, "C")->capture_default_str();
  gradcheck->add_option("--out-dim", gc.out_dim, "T")->capture_default_str();
  gradcheck->add_option("--k", gc.k, "regions")->capture_default_str();
  gradcheck->add_option("--seed", gc.seed)->capture_default_str();
  gradcheck->add_option("--tolerance", gc.tolerance, "max relative error")->capture_default_str();
  gradcheck->add_option("--corrupt-gradient", gc.analytic_bias, "add this to every analytic gradient entry");

  auto* show = app.add_subcommand("config", "print the fully resolved config");
  add_config_options(show, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (preprocess->parsed()) {
      cmd_preprocess(resolve(o), std::cout);
    } else if (synth->parsed()) {
      cmd_synth(resolve(o), std::cout);
    } else if (train->parsed()) {
      cmd_train(resolve(o), resume, std::cout);
    } else if (eval->parsed()) {
      cmd_eval(eval_ckpt, eval_cache, metrics_json ? std::optional<std::filesystem::path>(*metrics_json) : std::nullopt,
               std::cout);
    } else if (gradcheck->parsed()) {
      if (!cmd_gradcheck(gc, std::cout)) {
        std::cerr << "error: gradient check failed\n";
        return kNumeric;
      }
    } else if (show->parsed()) {
      std::cout << dump_run_config(resolve(o));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOk;
}
