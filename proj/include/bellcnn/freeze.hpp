#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bellcnn/model.hpp"

namespace bellcnn {

inline constexpr std::uint32_t kFrozenFormatVersion = 1;

// Container layout, all integers little-endian:
//   "BCNN" | u32 version | u32 descriptor length | descriptor (UTF-8, one layer per line)
//   | per-layer blobs (binary32 weights then bias, descriptor order) | u32 CRC-32 of all preceding bytes

/// Descriptor text, e.g. "conv k=32 f=5 s=1 p=2 in=64x64x1 out=64x64x32 act=relu\n".
std::string graph_descriptor(const ModelGraph& g);

std::vector<std::uint8_t> serialize(const ModelGraph& g);
ModelGraph deserialize(std::span<const std::uint8_t> bytes);

/// Writes the container and returns its CRC-32.
std::uint32_t freeze(const ModelGraph& g, const std::filesystem::path& path);

/// Restores an Infer-mode, binary32, immutable graph.
ModelGraph thaw(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace bellcnn
