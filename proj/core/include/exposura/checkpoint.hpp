#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "exposura/network.hpp"

namespace exposura {

// Tensor container, little-endian:
//   "EXPW" | u32 version (1) | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 rank | u32 extents[rank] | f32 data
//   u32 CRC-32 of every preceding byte

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_weights(const ModelWeights& weights);
/// Throws FormatError on a foreign magic, unsupported version, truncation
/// ("truncated at tensor <name>") or checksum mismatch. Nothing is returned
/// on failure.
ModelWeights decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace exposura
