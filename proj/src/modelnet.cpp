#include "shrinking/modelnet.hpp"

#include <algorithm>
#include <cctype>

#include "shrinking/errors.hpp"
#include "shrinking/sampling.hpp"

namespace fs = std::filesystem;

namespace shrinking {
namespace {

std::vector<fs::path> off_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".off") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

Matrix mesh_to_cloud(const TriangleMesh& mesh, std::size_t points, std::size_t dims, Rng& rng) {
  if (dims != 3 && dims != 6) throw ConfigError("point dims must be 3 or 6, got " + std::to_string(dims));
  const SurfaceSample s = sample_surface(mesh, points, rng);
  Matrix cloud = normalize(s.points);
  return dims == 6 ? with_normals(mesh, cloud, s.face) : cloud;
}

PreprocessResult preprocess_directory(const fs::path& root, const PreprocessOptions& options) {
  if (!fs::is_directory(root)) throw DataError("data directory " + root.string() + " does not exist");
  if (options.points == 0) throw ConfigError("points per cloud must be positive");
  if (options.dims != 3 && options.dims != 6) throw ConfigError("point dims must be 3 or 6");

  std::vector<std::string> classes = options.classes;
  if (classes.empty()) {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory()) classes.push_back(entry.path().filename().string());
    }
  }
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.empty()) throw DataError("no class directories under " + root.string());

  PreprocessResult result;
  DatasetCache* splits[2] = {&result.train, &result.test};
  const char* names[2] = {"train", "test"};
  for (std::size_t s = 0; s < 2; ++s) {
    splits[s]->split = names[s];
    splits[s]->points = options.points;
    splits[s]->dims = options.dims;
    splits[s]->class_names = classes;
  }

  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (std::size_t s = 0; s < 2; ++s) {
      const auto files = off_files(root / classes[c] / names[s]);
      std::size_t loaded = 0;
      for (std::size_t i = 0; i < files.size(); ++i) {
        try {
          Rng rng(derive_seed(options.seed, {s, c, i}));
          Matrix cloud = mesh_to_cloud(read_off_file(files[i]), options.points, options.dims, rng);
          splits[s]->samples.push_back(Sample{std::move(cloud), c, classes[c] + "/" + files[i].filename().string()});
          ++loaded;
        } catch (const DataError& e) {
          result.failures.push_back({files[i], e.what()});
        }
      }
      if (loaded == 0) {
        throw DataError("class '" + classes[c] + "' has no readable " + names[s] + " meshes under " +
                        (root / classes[c] / names[s]).string());
      }
    }
  }
  return result;
}

}  // namespace shrinking
