#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shrinking/dataset.hpp"
#include "shrinking/mesh.hpp"
#include "shrinking/rng.hpp"

namespace shrinking {

struct PreprocessOptions {
  std::size_t points = 1200;
  std::size_t dims = 3;  // 3, or 6 with face normals
  std::uint64_t seed = 0;
  std::vector<std::string> classes;  // empty: every class directory found
};

struct PreprocessFailure {
  std::filesystem::path file;
  std::string reason;
};

struct PreprocessResult {
  DatasetCache train;
  DatasetCache test;
  std::vector<PreprocessFailure> failures;
};

/// Reads a ModelNet-style tree (<root>/<class>/{train,test}/*.off). Classes
/// are sorted by name and labeled in that order; files within a split are
/// sorted by name, and file i of class c in split s is sampled with the
/// stream derive_seed(seed, {s, c, i}). Unreadable files are collected in
/// `failures`; a DataError is thrown only if a class ends up empty.
PreprocessResult preprocess_directory(const std::filesystem::path& root, const PreprocessOptions& options);

/// Samples and normalizes one mesh (plus normals when dims == 6).
Matrix mesh_to_cloud(const TriangleMesh& mesh, std::size_t points, std::size_t dims, Rng& rng);

}  // namespace shrinking
