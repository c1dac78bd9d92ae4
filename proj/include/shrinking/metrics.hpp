#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace shrinking {

using Confusion = std::vector<std::vector<std::size_t>>;  // [true][predicted]

struct ClassStats {
  std::size_t support = 0;    // true samples of this class (row sum)
  std::size_t predicted = 0;  // column sum
  double precision = 0.0;     // NaN when nothing was predicted as this class
  double recall = 0.0;        // NaN when the class has no samples
  double f1 = 0.0;            // NaN if precision or recall is NaN
};

struct Metrics {
  Confusion confusion;
  std::size_t total = 0;
  double accuracy = 0.0;
  double micro_precision = 0.0;
  std::vector<ClassStats> per_class;
};

/// Throws ConfigError for an empty or non-square matrix or an empty total.
Metrics metrics_from_confusion(const Confusion& confusion);

Confusion confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                           std::size_t classes);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax_class(std::span<const double> scores);

/// Overall accuracy followed by a per-class table with columns
/// Class, Shapes, Precision (%), Recall (%), F1-Score (%). Undefined values
/// print as "n/a".
std::string format_report(const Metrics& metrics, const std::vector<std::string>& class_names);

}  // namespace shrinking
