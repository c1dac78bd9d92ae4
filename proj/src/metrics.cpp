#include "shrinking/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "shrinking/errors.hpp"

namespace shrinking {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? kNaN : static_cast<double>(num) / static_cast<double>(den);
}

std::string percent(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

Metrics metrics_from_confusion(const Confusion& confusion) {
  const std::size_t k = confusion.size();
  if (k == 0) throw ConfigError("confusion matrix is empty");
  for (const auto& row : confusion) {
    if (row.size() != k) throw ConfigError("confusion matrix must be square");
  }
  Metrics m;
  m.confusion = confusion;
  m.per_class.resize(k);
  std::size_t trace = 0;
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) {
      m.total += confusion[t][p];
      m.per_class[t].support += confusion[t][p];
      m.per_class[p].predicted += confusion[t][p];
    }
    trace += confusion[t][t];
  }
  if (m.total == 0) throw ConfigError("confusion matrix has no samples");
  m.accuracy = ratio(trace, m.total);

  std::size_t predicted_total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    ClassStats& s = m.per_class[c];
    const std::size_t tp = confusion[c][c];
    s.precision = ratio(tp, s.predicted);
    s.recall = ratio(tp, s.support);
    if (std::isnan(s.precision) || std::isnan(s.recall)) {
      s.f1 = kNaN;
    } else if (tp == 0) {
      s.f1 = 0.0;
    } else {
      s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    }
    predicted_total += s.predicted;
  }
  // micro-averaged precision: pooled TP over pooled predictions
  m.micro_precision = ratio(trace, predicted_total);
  return m;
}

Confusion confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                           std::size_t classes) {
  if (truth.size() != predicted.size()) throw ConfigError("truth and prediction counts differ");
  Confusion c(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) {
      throw ConfigError("label " + std::to_string(std::max(truth[i], predicted[i])) + " outside " +
                        std::to_string(classes) + " classes");
    }
    ++c[truth[i]][predicted[i]];
  }
  return c;
}

std::size_t argmax_class(std::span<const double> scores) {
  if (scores.empty()) throw ConfigError("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::string format_report(const Metrics& metrics, const std::vector<std::string>& class_names) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "Overall accuracy: %s%% (%zu samples)\n", percent(metrics.accuracy).c_str(),
                metrics.total);
  out += line;
  std::size_t width = 5;
  for (const auto& n : class_names) width = std::max(width, n.size());
  std::snprintf(line, sizeof line, "%-*s %8s %14s %11s %13s\n", static_cast<int>(width), "Class", "Shapes",
                "Precision (%)", "Recall (%)", "F1-Score (%)");
  out += line;
  for (std::size_t c = 0; c < metrics.per_class.size(); ++c) {
    const ClassStats& s = metrics.per_class[c];
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    std::snprintf(line, sizeof line, "%-*s %8zu %14s %11s %13s\n", static_cast<int>(width), name.c_str(), s.support,
                  percent(s.precision).c_str(), percent(s.recall).c_str(), percent(s.f1).c_str());
    out += line;
  }
  return out;
}

}  // namespace shrinking
