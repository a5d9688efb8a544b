#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mgtok/vlm.hpp"

namespace mgtok {

inline constexpr std::uint32_t kCheckpointFileVersion = 1;

struct Checkpoint {
  VlmModel model;
  /// Free-form text stored alongside the weights (the CLI keeps the
  /// experiment config here).
  std::string note;
};

// Payload layout (little-endian):
//   projector config: i32 in, i32 hidden, i32 out, u64 seed
//   decoder config:   i32 vocab, i32 dim, i32 layers, i32 heads, i32 ff, i32 context, u64 seed
//   two parameter stores (projector, decoder), each:
//     u64 count, then per block: str name, u64 rows, u64 cols, rows*cols f64 (column-major)
//   str note
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> file);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// CRC32 over the projector and decoder weights.
std::uint32_t model_checksum(const VlmModel& model);

}  // namespace mgtok
