#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <filesystem>
#include <string>
#include <vector>

#include "shrinking/matrix.hpp"

namespace shrinking {

struct Sample {
  Matrix cloud;  // S x C, spatial channels in [-1, 1]
  std::size_t label = 0;
  std::string source;  // file name or generator tag

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetCache {
  std::string split;  // "train" or "test"
  std::size_t points = 0;
  std::size_t dims = 0;
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  friend bool operator==(const DatasetCache&, const DatasetCache&) = default;
};

inline constexpr std::uint32_t kCacheVersion = 1;

/// Throws ConfigError if a sample's shape differs from (points, dims) or a
/// label is outside the class table.
void validate_dataset(const DatasetCache& data);

/// Binary layout (little-endian): magic "SHRKDATA", u32 version, split,
/// u64 S, u64 C, u32 class count and names, u64 sample count, then per
/// sample a u64 byte length followed by u32 label, source string and S*C
/// f64 values; a CRC-32 of all preceding bytes closes the file.
std::vector<std::uint8_t> encode_cache(const DatasetCache& data);
DatasetCache decode_cache(std::span<const std::uint8_t> bytes, const std::string& what = "dataset cache");

void cache_write(const DatasetCache& data, const std::filesystem::path& path);
DatasetCache cache_read(const std::filesystem::path& path);

/// Samples per class, indexed by label.
std::vector<std::size_t> class_counts(const DatasetCache& data);

}  // namespace shrinking
