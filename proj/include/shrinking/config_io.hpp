#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "shrinking/network.hpp"
#include "shrinking/synthetic.hpp"
#include "shrinking/train.hpp"

namespace shrinking {

struct SynthSection {
  std::vector<Shape> shapes{Shape::sphere, Shape::cube, Shape::cylinder};
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 30;
};

struct DataSection {
  std::string modelnet_dir;  // <class>/{train,test}/*.off tree read by `preprocess`
  std::string train_cache = "data/train.cache";
  std::string test_cache = "data/test.cache";
  std::size_t points = 1200;  // S
  std::size_t dims = 3;       // 3, or 6 with unit normals
  double noise_sigma = 0.02;  // training-time jitter on xyz
  std::vector<std::string> classes;  // preprocess filter; empty keeps every class
  SynthSection synthetic;
};

struct OutputSection {
  std::string checkpoint = "run/checkpoint.shrk";
  std::string history = "run/history.txt";
  std::string resolved_config = "run/config.json";
};

/// Everything a command needs. The network's input width follows
/// data.dims, and train.seed / train.noise_sigma mirror seed and
/// data.noise_sigma, so each value has exactly one place in the document.
struct RunConfig {
  std::uint64_t seed = 0;
  DataSection data;
  NetworkConfig network = shrinkingnet_config();
  TrainConfig train;
  OutputSection output;
};

/// Parses a JSON document. Missing keys take their defaults; unknown keys,
/// wrong types and invalid values throw ConfigError naming the key path.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Re-establishes the mirrored fields and validates the whole config.
void finalize_run_config(RunConfig& config);

/// Fully expanded document (every default and MLP width written out).
/// parse_run_config(dump_run_config(c)) reproduces c.
std::string dump_run_config(const RunConfig& config);

}  // namespace shrinking
