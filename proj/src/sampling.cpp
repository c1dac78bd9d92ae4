#include "shrinking/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "shrinking/errors.hpp"

namespace shrinking {

SurfaceSample sample_surface(const TriangleMesh& mesh, std::size_t count, Rng& rng) {
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += triangle_area(mesh, f);
    cumulative[f] = total;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DataError("cannot sample a mesh with zero total surface area (" + std::to_string(mesh.faces.size()) +
                    " faces)");
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SurfaceSample out{Matrix(count, 3), std::vector<std::size_t>(count)};
  for (std::size_t s = 0; s < count; ++s) {
    const double pick = unit(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    std::size_t f = static_cast<std::size_t>(it - cumulative.begin());
    if (f == mesh.faces.size()) {
      // pick rounded up to the total: take the last face with positive area
      f = static_cast<std::size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), total) - cumulative.begin());
    }

    const double r1 = std::sqrt(unit(rng));
    const double r2 = unit(rng);
    const double wa = 1.0 - r1;
    const double wb = r1 * (1.0 - r2);
    const double wc = r1 * r2;
    const auto& tri = mesh.faces[f];
    for (std::size_t c = 0; c < 3; ++c) {
      out.points(s, c) = wa * mesh.vertices[tri[0]][c] + wb * mesh.vertices[tri[1]][c] + wc * mesh.vertices[tri[2]][c];
    }
    out.face[s] = f;
  }
  return out;
}

Matrix normalize(const Matrix& cloud, std::size_t spatial) {
  if (spatial > cloud.cols()) throw ConfigError("normalize: more spatial columns than the cloud has");
  Matrix out = cloud;
  if (cloud.rows() == 0) return out;
  for (std::size_t c = 0; c < spatial; ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < cloud.rows(); ++i) {
      lo = std::min(lo, cloud(i, c));
      hi = std::max(hi, cloud(i, c));
    }
    const double extent = hi - lo;
    for (std::size_t i = 0; i < cloud.rows(); ++i) {
      if (!(extent > 0.0)) {
        out(i, c) = 0.0;
        continue;
      }
      // pin the extremes exactly so repeated normalization is a fixed point
      const double v = cloud(i, c);
      out(i, c) = v == lo ? -1.0 : v == hi ? 1.0 : std::clamp(2.0 * (v - lo) / extent - 1.0, -1.0, 1.0);
    }
  }
  return out;
}

Matrix with_normals(const TriangleMesh& mesh, const Matrix& points, const std::vector<std::size_t>& face) {
  if (points.cols() != 3 || face.size() != points.rows()) {
    throw ConfigError("with_normals: need S x 3 points and one face id per point");
  }
  Matrix out(points.rows(), 6);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    if (face[i] >= mesh.faces.size()) throw DataError("with_normals: face id out of range");
    const Vec3 n = face_normal(mesh, face[i]);
    for (std::size_t c = 0; c < 3; ++c) {
      out(i, c) = points(i, c);
      out(i, c + 3) = n[c];
    }
  }
  return out;
}

Matrix add_noise(const Matrix& cloud, double sigma, Rng& rng, std::size_t spatial) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be finite and >= 0");
  Matrix out = cloud;
  if (sigma == 0.0) return out;
  const std::size_t channels = std::min({spatial, std::size_t{3}, cloud.cols()});
  std::normal_distribution<double> noise(0.0, sigma);
  for (std::size_t i = 0; i < cloud.rows(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) out(i, c) += noise(rng);
  }
  return out;
}

}  // namespace shrinking
