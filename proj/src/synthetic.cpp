#include "shrinking/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "shrinking/errors.hpp"
#include "shrinking/sampling.hpp"

namespace shrinking {
namespace {

void put(Matrix& m, std::size_t i, double x, double y, double z) {
  m(i, 0) = x;
  m(i, 1) = y;
  m(i, 2) = z;
}

// rotation about z, applied to points and normals in place
void rotate_z(Matrix& m, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double x = m(i, 0), y = m(i, 1);
    m(i, 0) = c * x - s * y;
    m(i, 1) = s * x + c * y;
  }
}

std::uint64_t split_tag(const std::string& split) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : split) h = (h ^ ch) * 1099511628211ULL;
  return h;
}

}  // namespace

Shape shape_from_name(const std::string& name) {
  if (name == "sphere") return Shape::sphere;
  if (name == "cube") return Shape::cube;
  if (name == "cylinder") return Shape::cylinder;
  throw ConfigError("unknown synthetic shape '" + name + "' (choose sphere, cube or cylinder)");
}

std::string shape_name(Shape shape) {
  switch (shape) {
    case Shape::sphere: return "sphere";
    case Shape::cube: return "cube";
    case Shape::cylinder: return "cylinder";
  }
  return "unknown";
}

ShapeSurface sample_shape(Shape shape, std::size_t count, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr double pi = std::numbers::pi;
  ShapeSurface out{Matrix(count, 3), Matrix(count, 3), 0.0};
  const double scale = 0.5 + 1.5 * unit(rng);

  switch (shape) {
    case Shape::sphere: {
      out.radius = scale;
      for (std::size_t i = 0; i < count; ++i) {
        double x, y, z, len;
        do {
          x = gauss(rng);
          y = gauss(rng);
          z = gauss(rng);
          len = std::sqrt(x * x + y * y + z * z);
        } while (len < 1e-12);
        put(out.normals, i, x / len, y / len, z / len);
        put(out.points, i, scale * x / len, scale * y / len, scale * z / len);
      }
      break;
    }
    case Shape::cube: {
      const double h[3] = {scale * (0.7 + 0.6 * unit(rng)), scale * (0.7 + 0.6 * unit(rng)),
                           scale * (0.7 + 0.6 * unit(rng))};
      out.radius = scale;
      // face pair areas: the pair normal to axis a has area 4 h[b] h[c]
      const double area[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};
      const double total = area[0] + area[1] + area[2];
      for (std::size_t i = 0; i < count; ++i) {
        const double pick = unit(rng) * total;
        const std::size_t axis = pick < area[0] ? 0 : pick < area[0] + area[1] ? 1 : 2;
        const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
        double p[3], n[3] = {0, 0, 0};
        for (std::size_t a = 0; a < 3; ++a) p[a] = (2.0 * unit(rng) - 1.0) * h[a];
        p[axis] = side * h[axis];
        n[axis] = side;
        put(out.points, i, p[0], p[1], p[2]);
        put(out.normals, i, n[0], n[1], n[2]);
      }
      break;
    }
    case Shape::cylinder: {
      const double r = scale;
      const double half = r * (0.6 + 1.2 * unit(rng));  // height / diameter in [0.6, 1.8]
      out.radius = r;
      const double lateral = 2.0 * pi * r * 2.0 * half;
      const double caps = 2.0 * pi * r * r;
      for (std::size_t i = 0; i < count; ++i) {
        const double theta = 2.0 * pi * unit(rng);
        if (unit(rng) * (lateral + caps) < lateral) {
          const double z = (2.0 * unit(rng) - 1.0) * half;
          put(out.points, i, r * std::cos(theta), r * std::sin(theta), z);
          put(out.normals, i, std::cos(theta), std::sin(theta), 0.0);
        } else {
          const double rho = r * std::sqrt(unit(rng));
          const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
          put(out.points, i, rho * std::cos(theta), rho * std::sin(theta), side * half);
          put(out.normals, i, 0.0, 0.0, side);
        }
      }
      break;
    }
  }
  const double angle = 2.0 * pi * unit(rng);
  rotate_z(out.points, angle);
  rotate_z(out.normals, angle);
  return out;
}

DatasetCache synth_dataset(const SynthOptions& options) {
  if (options.dims != 3 && options.dims != 6) throw ConfigError("synthetic dims must be 3 or 6");
  if (options.classes.empty()) throw ConfigError("synthetic dataset needs at least one class");
  if (options.points == 0) throw ConfigError("synthetic dataset needs at least one point per cloud");
  DatasetCache data;
  data.split = options.split;
  data.points = options.points;
  data.dims = options.dims;
  for (Shape s : options.classes) data.class_names.push_back(shape_name(s));
  const std::uint64_t tag = split_tag(options.split);
  for (std::size_t c = 0; c < options.classes.size(); ++c) {
    for (std::size_t i = 0; i < options.per_class; ++i) {
      Rng rng(derive_seed(options.seed, {tag, c, i}));
      const ShapeSurface surf = sample_shape(options.classes[c], options.points, rng);
      Matrix cloud = normalize(surf.points);
      if (options.dims == 6) {
        Matrix wide(options.points, 6);
        for (std::size_t p = 0; p < options.points; ++p) {
          for (std::size_t k = 0; k < 3; ++k) {
            wide(p, k) = cloud(p, k);
            wide(p, k + 3) = surf.normals(p, k);
          }
        }
        cloud = std::move(wide);
      }
      data.samples.push_back(Sample{std::move(cloud), c, shape_name(options.classes[c]) + "_" + std::to_string(i)});
    }
  }
  return data;
}

}  // namespace shrinking
