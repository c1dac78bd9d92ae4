#include "shrinking/dataset.hpp"

#include <cstring>

#include "shrinking/binary_io.hpp"
#include "shrinking/errors.hpp"

namespace shrinking {
namespace {

constexpr char kMagic[8] = {'S', 'H', 'R', 'K', 'D', 'A', 'T', 'A'};

}  // namespace

void validate_dataset(const DatasetCache& data) {
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    if (s.cloud.rows() != data.points || s.cloud.cols() != data.dims) {
      throw ConfigError("sample " + std::to_string(i) + " (" + s.source + ") is " + shape_string(s.cloud) +
                        ", dataset header says " + std::to_string(data.points) + "x" + std::to_string(data.dims));
    }
    if (s.label >= data.class_names.size()) {
      throw ConfigError("sample " + std::to_string(i) + " has label " + std::to_string(s.label) + " but only " +
                        std::to_string(data.class_names.size()) + " classes are declared");
    }
  }
}

std::vector<std::uint8_t> encode_cache(const DatasetCache& data) {
  validate_dataset(data);
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), sizeof kMagic});
  w.u32(kCacheVersion);
  w.str(data.split);
  w.u64(data.points);
  w.u64(data.dims);
  w.u32(static_cast<std::uint32_t>(data.class_names.size()));
  for (const auto& name : data.class_names) w.str(name);
  w.u64(data.samples.size());
  for (const Sample& s : data.samples) {
    w.u64(4 + 4 + s.source.size() + 8 * s.cloud.size());
    w.u32(static_cast<std::uint32_t>(s.label));
    w.str(s.source);
    w.f64s(s.cloud.values());
  }
  seal_with_crc(w);
  return std::move(w.bytes());
}

DatasetCache decode_cache(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(what + ": not a dataset cache (bad magic)");
  }
  ByteReader r(bytes, what);
  r.take(sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kCacheVersion) {
    throw DataError(what + ": unsupported cache version " + std::to_string(version) + " (expected " +
                    std::to_string(kCacheVersion) + ")");
  }
  ByteReader body(verify_crc(bytes, what), what);
  body.take(sizeof kMagic + 4);

  DatasetCache data;
  data.split = body.str();
  data.points = body.u64();
  data.dims = body.u64();
  const std::uint32_t classes = body.u32();
  for (std::uint32_t c = 0; c < classes; ++c) data.class_names.push_back(body.str());
  const std::uint64_t count = body.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t length = body.u64();
    ByteReader rec(body.take(length), what + " sample " + std::to_string(i));
    Sample s;
    s.label = rec.u32();
    s.source = rec.str();
    if (rec.remaining() != 8 * data.points * data.dims) {
      throw DataError(what + ": sample " + std::to_string(i) + " record size does not match S x C");
    }
    s.cloud = Matrix(data.points, data.dims);
    rec.f64s(s.cloud.values());
    data.samples.push_back(std::move(s));
  }
  if (body.remaining() != 0) throw DataError(what + ": trailing bytes after the last sample");
  try {
    validate_dataset(data);
  } catch (const ConfigError& e) {
    throw DataError(what + ": " + e.what());
  }
  return data;
}

void cache_write(const DatasetCache& data, const std::filesystem::path& path) {
  write_file_atomic(path, encode_cache(data));
}

DatasetCache cache_read(const std::filesystem::path& path) {
  return decode_cache(read_file_bytes(path), path.string());
}

std::vector<std::size_t> class_counts(const DatasetCache& data) {
  std::vector<std::size_t> counts(data.class_names.size(), 0);
  for (const Sample& s : data.samples) {
    if (s.label < counts.size()) ++counts[s.label];
  }
  return counts;
}

}  // namespace shrinking
