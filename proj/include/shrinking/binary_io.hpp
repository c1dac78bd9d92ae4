#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace shrinking {

/// Little-endian encoder used by the dataset cache and checkpoint formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  void raw(std::span<const std::uint8_t> data);
  void f64s(std::span<const double> values);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked decoder; throws DataError naming `what_` on truncation.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  void f64s(std::span<double> out);
  std::span<const std::uint8_t> take(std::size_t n);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> data);

/// Appends a CRC-32 of everything written so far.
void seal_with_crc(ByteWriter& w);

/// Verifies and strips the trailing CRC-32; throws DataError on mismatch.
std::span<const std::uint8_t> verify_crc(std::span<const std::uint8_t> data, const std::string& what);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Writes to `path.tmp` and renames over `path`, so readers never observe a
/// partially written file. Missing parent directories are created.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);

}  // namespace shrinking
