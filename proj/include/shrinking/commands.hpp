#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "shrinking/config_io.hpp"
#include "shrinking/gradcheck.hpp"

namespace shrinking {

/// Reads data.modelnet_dir and writes data.train_cache / data.test_cache.
/// Prints per-class counts and every file that could not be read.
void cmd_preprocess(const RunConfig& config, std::ostream& out);

/// Writes synthetic train and test caches for data.synthetic.shapes.
void cmd_synth(const RunConfig& config, std::ostream& out);

/// Trains on data.train_cache. The resolved config is echoed to `out` and
/// written to output.resolved_config; the checkpoint and history file are
/// rewritten after every epoch. With `resume`, an existing checkpoint at
/// output.checkpoint is continued instead of starting over.
void cmd_train(const RunConfig& config, bool resume, std::ostream& out);

/// Evaluates a checkpoint's best weights on a cache and prints the report.
/// Optionally writes the metrics as JSON.
void cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& cache,
              const std::optional<std::filesystem::path>& metrics_json, std::ostream& out);

struct GradcheckSuiteOptions {
  std::size_t points = 12;  // N
  std::size_t in_dim = 3;   // C
  std::size_t out_dim = 6;  // T
  std::size_t k = 3;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double analytic_bias = 0.0;  // test hook, see GradCheckOptions
};

struct StageCheck {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

/// Finite-difference checks of self-correlation, K-Means-Conv (frozen
/// regions), aggregation, max-pool (frozen argmax), the classifier with NLL,
/// and the composed unit with the default hidden widths.
std::vector<StageCheck> gradcheck_suite(const GradcheckSuiteOptions& options);

/// Runs the suite and prints one line per stage. Returns true if every stage passed.
bool cmd_gradcheck(const GradcheckSuiteOptions& options, std::ostream& out);

/// JSON form of a metrics report with class names.
std::string metrics_to_json(const Metrics& metrics, const std::vector<std::string>& class_names);

}  // namespace shrinking
