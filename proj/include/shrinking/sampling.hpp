#pragma once

#include <cstddef>
#include <vector>

#include "shrinking/matrix.hpp"
#include "shrinking/mesh.hpp"
#include "shrinking/rng.hpp"

namespace shrinking {

struct SurfaceSample {
  Matrix points;                  // S x 3
  std::vector<std::size_t> face;  // generating triangle per point
};

/// Area-weighted surface sampling: a face is drawn with probability
/// proportional to its area, then a uniform point inside it via
/// (1 - sqrt(r1), sqrt(r1)(1 - r2), sqrt(r1) r2) barycentric weights.
SurfaceSample sample_surface(const TriangleMesh& mesh, std::size_t count, Rng& rng);

/// Min-max maps each of the first `spatial` columns onto [-1, 1]; columns
/// with zero extent become 0. Remaining columns are copied.
Matrix normalize(const Matrix& cloud, std::size_t spatial = 3);

/// Appends the unit normal of each point's generating face: S x 3 -> S x 6.
Matrix with_normals(const TriangleMesh& mesh, const Matrix& points, const std::vector<std::size_t>& face);

/// Gaussian noise with standard deviation `sigma` on the first `spatial`
/// columns (at most 3); other channels are left untouched.
Matrix add_noise(const Matrix& cloud, double sigma, Rng& rng, std::size_t spatial = 3);

}  // namespace shrinking
