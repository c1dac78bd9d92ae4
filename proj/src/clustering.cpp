#include "shrinking/clustering.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "shrinking/autodiff.hpp"
#include "shrinking/errors.hpp"

namespace shrinking {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double diff = a[c] - b[c];
    d += diff * diff;
  }
  return d;
}

std::vector<std::size_t> assign_nearest(const Matrix& points, const Matrix& centroids) {
  std::vector<std::size_t> region(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < centroids.rows(); ++k) {
      const double d = squared_distance(points.row(i), centroids.row(k));
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    region[i] = best_k;
  }
  return region;
}

void repair_empty(const Matrix& points, const std::vector<std::size_t>& order,
                  std::vector<std::size_t>& region, Matrix& centroids) {
  const std::size_t k = centroids.rows();
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t r : region) ++counts[r];
  for (std::size_t e = 0; e < k; ++e) {
    if (counts[e] != 0) continue;
    double farthest = -1.0;
    std::size_t pick = order.front();
    for (std::size_t i : order) {
      if (counts[region[i]] <= 1) continue;
      const double d = squared_distance(points.row(i), centroids.row(region[i]));
      if (d > farthest) {
        farthest = d;
        pick = i;
      }
    }
    --counts[region[pick]];
    region[pick] = e;
    counts[e] = 1;
    std::copy_n(points.row(pick).data(), points.cols(), centroids.row(e).data());
  }
}

Matrix region_means(const Matrix& points, const std::vector<std::size_t>& order,
                    const std::vector<std::size_t>& region, std::size_t k) {
  Matrix sums(k, points.cols(), 0.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i : order) {
    auto dst = sums.row(region[i]);
    auto src = points.row(i);
    for (std::size_t c = 0; c < points.cols(); ++c) dst[c] += src[c];
    ++counts[region[i]];
  }
  for (std::size_t r = 0; r < k; ++r) {
    for (double& v : sums.row(r)) v /= static_cast<double>(counts[r]);
  }
  return sums;
}

double ordered_inertia(const Matrix& points, const std::vector<std::size_t>& order,
                       const std::vector<std::size_t>& region, const Matrix& centroids) {
  double total = 0.0;
  for (std::size_t i : order) total += squared_distance(points.row(i), centroids.row(region[i]));
  return total;
}

}  // namespace

Matrix kmeanspp_seed(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  if (k == 0) throw ConfigError("kmeanspp_seed: K must be >= 1");
  if (k > n) {
    throw ConfigError("kmeanspp_seed: K=" + std::to_string(k) + " exceeds the number of points N=" +
                      std::to_string(n));
  }
  const auto order = canonical_row_order(points);
  Matrix centroids(k, points.cols());
  std::vector<bool> chosen(n, false);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());

  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = order[first(rng)];
  for (std::size_t c = 0;; ++c) {
    chosen[pick] = true;
    std::copy_n(points.row(pick).data(), points.cols(), centroids.row(c).data());
    if (c + 1 == k) break;

    double total = 0.0;
    for (std::size_t i : order) {
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centroids.row(c)));
      total += nearest[i];
    }
    pick = n;
    if (total > 0.0) {
      std::uniform_real_distribution<double> draw(0.0, total);
      const double target = draw(rng);
      double cumulative = 0.0;
      for (std::size_t i : order) {
        if (nearest[i] <= 0.0) continue;
        cumulative += nearest[i];
        pick = i;
        if (cumulative > target) break;
      }
    }
    if (pick == n) {
      // every remaining point coincides with a centroid
      for (std::size_t i : order) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
  }
  return centroids;
}

std::pair<ClusterAssignment, LloydReport> lloyd(const Matrix& points, Matrix centroids,
                                                const LloydOptions& options) {
  if (centroids.cols() != points.cols()) {
    throw ConfigError("lloyd: centroid dimension " + std::to_string(centroids.cols()) +
                      " differs from point dimension " + std::to_string(points.cols()));
  }
  const std::size_t k = centroids.rows();
  if (k == 0 || k > points.rows()) {
    throw ConfigError("lloyd: need 1 <= K <= N, got K=" + std::to_string(k) +
                      ", N=" + std::to_string(points.rows()));
  }
  const auto order = canonical_row_order(points);
  LloydReport report;
  std::vector<std::size_t> region;
  std::vector<std::size_t> previous;
  const std::size_t rounds = std::max<std::size_t>(1, options.max_iter);
  for (std::size_t it = 1; it <= rounds; ++it) {
    region = assign_nearest(points, centroids);
    repair_empty(points, order, region, centroids);
    const double current = ordered_inertia(points, order, region, centroids);
    report.inertia_history.push_back(current);
    report.iterations = options.max_iter == 0 ? 0 : it;
    if (options.max_iter == 0 || it == rounds) break;
    const bool unchanged = region == previous;
    const std::size_t h = report.inertia_history.size();
    const bool stalled = h > 1 && report.inertia_history[h - 2] - current < options.tol;
    if (unchanged || current == 0.0 || stalled) break;
    centroids = region_means(points, order, region, k);
    previous = region;
  }
  report.inertia = report.inertia_history.back();
  return {ClusterAssignment{std::move(region), k, std::move(centroids)}, std::move(report)};
}

std::pair<ClusterAssignment, LloydReport> kmeans(const Matrix& points, std::size_t k, Rng& rng,
                                                 const LloydOptions& options) {
  return lloyd(points, kmeanspp_seed(points, k, rng), options);
}

std::vector<std::vector<std::size_t>> regions(const ClusterAssignment& assignment) {
  std::vector<std::vector<std::size_t>> sets(assignment.k);
  for (std::size_t i = 0; i < assignment.region.size(); ++i) {
    if (assignment.region[i] >= assignment.k) {
      throw ConfigError("regions: point " + std::to_string(i) + " has region id " +
                        std::to_string(assignment.region[i]) + " >= K=" + std::to_string(assignment.k));
    }
    sets[assignment.region[i]].push_back(i);
  }
  return sets;
}

double inertia(const Matrix& points, const ClusterAssignment& assignment) {
  return ordered_inertia(points, canonical_row_order(points), assignment.region, assignment.centroids);
}

void validate_assignment(const ClusterAssignment& assignment, std::size_t points) {
  if (assignment.region.size() != points) {
    throw ConfigError("assignment covers " + std::to_string(assignment.region.size()) + " points, cloud has " +
                      std::to_string(points));
  }
  for (const auto& members : regions(assignment)) {
    if (members.empty()) throw ConfigError("assignment has an empty region");
  }
}

}  // namespace shrinking
