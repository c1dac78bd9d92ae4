#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "shrinking/train.hpp"

namespace shrinking {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (little-endian, CRC-32 trailer, same conventions as the
/// dataset cache): magic "SHRKCKPT", u32 version, train config, class
/// names, S, network config, current and best weights, Adam moments, epoch
/// counters, history and per-step losses.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what = "checkpoint");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace shrinking
