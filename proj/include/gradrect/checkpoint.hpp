#pragma once

#include <cstdint>
#include <filesystem>

#include "gradrect/model.hpp"

namespace gradrect {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Binary checkpoint, little-endian:
///   "GRDCKPT1" | u32 version | u32 kind | u32 vocab | u32 embed_dim |
///   u32 hidden_dim | u32 n_segments |
///   n_segments x { u32 name_len | name bytes | u64 offset | u64 length } |
///   u64 n_values | f64 values[n_values]   (segment order)
/// A JSON sidecar `<path>.json` mirrors the header for inspection.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

std::filesystem::path checkpoint_sidecar_path(const std::filesystem::path& path);

}  // namespace gradrect
