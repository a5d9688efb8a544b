#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mgtok/token_pipeline.hpp"

namespace mgtok {

// Token-bundle file ("MGTB", version 1) inside the common container.
//
// Header:
//   u32 dim | u32 n_global | u32 n_local | u32 n_object
//   i32 local_rows | i32 local_cols | u8 scaled | u8 scale_mode
//   f64 mu | f64 sigma
// Then one record per token, in bundle order:
//   u8 kind | i32 source_index | i32 grid_row | i32 grid_col | i32 mask_id
//   f64 confidence | u8 background | f64 final_loss | f64 map_iou
//   u8 has_pos | f64 pos[dim] (if has_pos) | f64 embedding[dim]
//
// All scalars little-endian; doubles are stored as their IEEE-754 bits.

inline constexpr std::uint32_t kBundleFileVersion = 1;

std::vector<std::uint8_t> encode_bundle(const TokenBundle& bundle);
TokenBundle decode_bundle(std::span<const std::uint8_t> file);

void write_bundle(const TokenBundle& bundle, const std::filesystem::path& path);
TokenBundle read_bundle(const std::filesystem::path& path);

}  // namespace mgtok
