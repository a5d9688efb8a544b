#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mgtok/mask_ops.hpp"

namespace mgtok {

// Mask-set file ("MGMS", version 1) inside the common container:
//
//   u32 image_side | u32 proposal_count | u8 has_background
//   per member (proposals in order, then background):
//     i32 x_min, y_min, x_max, y_max | f64 confidence | i32 source_object
//     u32 run_count | u32 runs[run_count]
//
// Runs cover the mask in row-major order and alternate 0,1,0,... starting
// with a (possibly empty) run of zeros. They must sum to image_side^2.

inline constexpr std::uint32_t kMaskFileVersion = 1;

std::vector<std::uint32_t> rle_encode(const BitGrid& mask);
BitGrid rle_decode(std::span<const std::uint32_t> runs, std::size_t side);

std::vector<std::uint8_t> encode_maskset(const MaskSet& set);
MaskSet decode_maskset(std::span<const std::uint8_t> file);

void write_maskset(const MaskSet& set, const std::filesystem::path& path);
MaskSet read_maskset(const std::filesystem::path& path);

bool operator==(const MaskProposal& a, const MaskProposal& b);
bool operator==(const MaskSet& a, const MaskSet& b);

}  // namespace mgtok
