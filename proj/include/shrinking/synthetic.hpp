#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "shrinking/dataset.hpp"
#include "shrinking/rng.hpp"

namespace shrinking {

enum class Shape { sphere, cube, cylinder };

Shape shape_from_name(const std::string& name);  // ConfigError on unknown names
std::string shape_name(Shape shape);

/// Points drawn uniformly (by area) on an analytic surface before
/// normalization, with exact outward normals.
struct ShapeSurface {
  Matrix points;   // S x 3
  Matrix normals;  // S x 3
  double radius = 0.0;  // sphere/cylinder radius, cube half-extent
};

/// Surface of a randomly proportioned instance: sphere radius in [0.5, 2],
/// box half-extents each in [0.7, 1.3] (relative to a random scale),
/// cylinder with height/diameter ratio in [0.6, 1.8]. Each instance is
/// rotated by a random angle about the vertical axis.
ShapeSurface sample_shape(Shape shape, std::size_t count, Rng& rng);

struct SynthOptions {
  std::vector<Shape> classes{Shape::sphere, Shape::cube, Shape::cylinder};
  std::size_t per_class = 100;
  std::size_t points = 256;
  std::size_t dims = 3;  // 3, or 6 with normals appended
  std::uint64_t seed = 0;
  std::string split = "train";
};

/// Labeled, normalized clouds. Sample (class c, index i) uses the stream
/// derive_seed(seed, {split tag, c, i}).
DatasetCache synth_dataset(const SynthOptions& options);

}  // namespace shrinking
