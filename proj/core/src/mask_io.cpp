#include "mgtok/mask_io.hpp"

#include <bit>
#include <cstring>

#include "mgtok/binary_io.hpp"

namespace mgtok {

namespace {

constexpr FourCC kMagic{'M', 'G', 'M', 'S'};
constexpr std::uint32_t kMaxSide = 1u << 14;

void put_member(ByteWriter& w, const MaskProposal& p) {
  w.i32(p.bbox.x_min);
  w.i32(p.bbox.y_min);
  w.i32(p.bbox.x_max);
  w.i32(p.bbox.y_max);
  w.f64(p.confidence);
  w.i32(p.source_object);
  const auto runs = rle_encode(p.mask);
  w.u32(static_cast<std::uint32_t>(runs.size()));
  for (std::uint32_t r : runs) w.u32(r);
}

MaskProposal get_member(ByteReader& r, std::size_t side) {
  MaskProposal p;
  const std::size_t at = r.offset();
  p.bbox.x_min = r.i32();
  p.bbox.y_min = r.i32();
  p.bbox.x_max = r.i32();
  p.bbox.y_max = r.i32();
  const auto s = static_cast<int>(side);
  const BBox& b = p.bbox;
  if (b.x_min < 0 || b.y_min < 0 || b.x_max > s || b.y_max > s || b.x_min > b.x_max ||
      b.y_min > b.y_max) {
    throw FormatError(ErrorCode::corrupt, "bbox outside image bounds", at);
  }
  p.confidence = r.f64();
  if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
    throw FormatError(ErrorCode::corrupt, "confidence outside [0,1]", r.offset());
  }
  p.source_object = r.i32();
  const std::size_t n_runs = r.count(4);
  std::vector<std::uint32_t> runs(n_runs);
  for (auto& run : runs) run = r.u32();
  try {
    p.mask = rle_decode(runs, side);
  } catch (const Error& e) {
    throw FormatError(ErrorCode::corrupt, e.what(), r.offset());
  }
  return p;
}

}  // namespace

std::vector<std::uint32_t> rle_encode(const BitGrid& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t v : mask) {
    const std::uint8_t bit = v ? 1 : 0;
    if (bit != current) {
      runs.push_back(length);
      current = bit;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

BitGrid rle_decode(std::span<const std::uint32_t> runs, std::size_t side) {
  BitGrid mask(side, side, 0);
  std::size_t pos = 0;
  std::uint8_t bit = 0;
  for (std::uint32_t run : runs) {
    if (run > mask.size() - pos) throw_invalid("RLE runs overflow the mask");
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(pos), run, bit);
    pos += run;
    bit ^= 1;
  }
  if (pos != mask.size()) throw_invalid("RLE runs do not cover the mask");
  return mask;
}

std::vector<std::uint8_t> encode_maskset(const MaskSet& set) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(set.image_side));
  w.u32(static_cast<std::uint32_t>(set.proposals.size()));
  w.u8(set.background ? 1 : 0);
  for (const MaskProposal& p : set.proposals) put_member(w, p);
  if (set.background) put_member(w, *set.background);
  return seal_container(kMagic, kMaskFileVersion, w.buffer());
}

MaskSet decode_maskset(std::span<const std::uint8_t> file) {
  ByteReader r(open_container(file, kMagic, kMaskFileVersion));
  MaskSet set;
  const std::uint32_t side = r.u32();
  if (side == 0 || side > kMaxSide) throw FormatError(ErrorCode::corrupt, "implausible image side", 0);
  set.image_side = static_cast<int>(side);
  constexpr std::size_t kMinMemberBytes = 16 + 8 + 4 + 4 + 4;
  const std::size_t n = r.count(kMinMemberBytes);
  const std::uint8_t has_bg = r.u8();
  if (has_bg > 1) throw FormatError(ErrorCode::corrupt, "bad background flag", r.offset());
  set.proposals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) set.proposals.push_back(get_member(r, side));
  if (has_bg) set.background = get_member(r, side);
  r.expect_end();
  return set;
}

void write_maskset(const MaskSet& set, const std::filesystem::path& path) {
  write_file_bytes(path, encode_maskset(set));
}

MaskSet read_maskset(const std::filesystem::path& path) {
  return decode_maskset(read_file_bytes(path));
}

bool operator==(const MaskProposal& a, const MaskProposal& b) {
  return a.mask == b.mask && a.bbox == b.bbox &&
         std::bit_cast<std::uint64_t>(a.confidence) == std::bit_cast<std::uint64_t>(b.confidence) &&
         a.source_object == b.source_object;
}

bool operator==(const MaskSet& a, const MaskSet& b) {
  return a.image_side == b.image_side && a.proposals == b.proposals &&
         a.background == b.background;
}

}  // namespace mgtok
