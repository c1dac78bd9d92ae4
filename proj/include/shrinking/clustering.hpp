#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "shrinking/matrix.hpp"
#include "shrinking/rng.hpp"

namespace shrinking {

/// Partition of a cloud's points into `k` regions.
struct ClusterAssignment {
  std::vector<std::size_t> region;  // point index -> region id in [0, k)
  std::size_t k = 0;
  Matrix centroids;  // k x dim
};

struct LloydReport {
  std::size_t iterations = 0;
  double inertia = 0.0;
  std::vector<double> inertia_history;
};

struct LloydOptions {
  std::size_t max_iter = 25;  // 0 keeps the seeds (seeding-only K-Means++)
  double tol = 1e-6;
};

/// K-Means++ seeding: the first centroid is a uniformly drawn point, each
/// further one is drawn with probability proportional to the squared distance
/// to the nearest chosen centroid. Points are visited in lexicographic order
/// of their coordinates, so the chosen centroids depend only on the point set
/// and the generator state, not on the row order of `points`.
Matrix kmeanspp_seed(const Matrix& points, std::size_t k, Rng& rng);

/// Lloyd iterations from the given centroids. Assignment is by squared
/// Euclidean distance with ties to the lowest region id. Empty regions are
/// re-seeded at the point farthest from its centroid. Stops after max_iter
/// rounds, on an unchanged assignment, or when the inertia improves by less
/// than tol.
std::pair<ClusterAssignment, LloydReport> lloyd(const Matrix& points, Matrix centroids,
                                                const LloydOptions& options = {});

/// Seeding followed by lloyd().
std::pair<ClusterAssignment, LloydReport> kmeans(const Matrix& points, std::size_t k, Rng& rng,
                                                 const LloydOptions& options = {});

/// Member index sets per region, each in ascending point order.
std::vector<std::vector<std::size_t>> regions(const ClusterAssignment& assignment);

/// Sum of squared distances from each point to its region centroid.
double inertia(const Matrix& points, const ClusterAssignment& assignment);

/// Throws ConfigError unless every point has a region in [0, k) and no region is empty.
void validate_assignment(const ClusterAssignment& assignment, std::size_t points);

}  // namespace shrinking
