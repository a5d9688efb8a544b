#include "mgtok/bundle_io.hpp"

#include "mgtok/binary_io.hpp"

namespace mgtok {

namespace {

constexpr FourCC kMagic{'M', 'G', 'T', 'B'};
constexpr std::uint32_t kMaxDim = 1u << 16;

void put_vec(ByteWriter& w, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v[i]);
}

Vec get_vec(ByteReader& r, std::size_t dim) {
  Vec v(static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < dim; ++i) v[static_cast<Eigen::Index>(i)] = r.f64();
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_bundle(const TokenBundle& bundle) {
  const std::size_t dim = bundle.dim();
  for (const Token& t : bundle.tokens) {
    if (static_cast<std::size_t>(t.embedding.size()) != dim) throw_shape("bundle tokens have mixed dimensions");
    if (t.meta.pos_embedding.size() != 0 && static_cast<std::size_t>(t.meta.pos_embedding.size()) != dim)
      throw_shape("positional embedding dimension mismatch");
  }
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(bundle.count(TokenKind::global)));
  w.u32(static_cast<std::uint32_t>(bundle.count(TokenKind::local)));
  w.u32(static_cast<std::uint32_t>(bundle.count(TokenKind::object)));
  w.i32(bundle.local_rows);
  w.i32(bundle.local_cols);
  w.u8(bundle.scaled ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(bundle.scale_mode));
  w.f64(bundle.patch_stats.mu);
  w.f64(bundle.patch_stats.sigma);
  for (const Token& t : bundle.tokens) {
    w.u8(static_cast<std::uint8_t>(t.kind));
    w.i32(t.meta.source_index);
    w.i32(t.meta.grid_row);
    w.i32(t.meta.grid_col);
    w.i32(t.meta.mask_id);
    w.f64(t.meta.confidence);
    w.u8(t.meta.background ? 1 : 0);
    w.f64(t.meta.final_loss);
    w.f64(t.meta.map_iou);
    w.u8(t.meta.pos_embedding.size() != 0 ? 1 : 0);
    if (t.meta.pos_embedding.size() != 0) put_vec(w, t.meta.pos_embedding);
    put_vec(w, t.embedding);
  }
  return seal_container(kMagic, kBundleFileVersion, w.buffer());
}

TokenBundle decode_bundle(std::span<const std::uint8_t> file) {
  ByteReader r(open_container(file, kMagic, kBundleFileVersion));
  auto corrupt = [&r](const std::string& m) -> FormatError {
    return FormatError(ErrorCode::corrupt, "bundle: " + m, r.offset());
  };
  const std::uint32_t dim = r.u32();
  if (dim > kMaxDim) throw corrupt("implausible dimension");
  const std::uint32_t counts[3] = {r.u32(), r.u32(), r.u32()};
  TokenBundle b;
  b.local_rows = r.i32();
  b.local_cols = r.i32();
  const std::uint8_t scaled = r.u8();
  const std::uint8_t mode = r.u8();
  if (scaled > 1 || mode > 1) throw corrupt("bad flag byte");
  b.scaled = scaled == 1;
  b.scale_mode = static_cast<ScaleMode>(mode);
  b.patch_stats.mu = r.f64();
  b.patch_stats.sigma = r.f64();
  if (counts[0] > 1) throw corrupt("more than one global token");
  if (b.local_rows < 0 || b.local_cols < 0 ||
      static_cast<std::uint64_t>(b.local_rows) * static_cast<std::uint64_t>(b.local_cols) >
          counts[1]) {
    throw corrupt("local grid shape inconsistent with local count");
  }
  if (b.local_rows * b.local_cols != 0 &&
      static_cast<std::uint32_t>(b.local_rows * b.local_cols) != counts[1]) {
    throw corrupt("local grid shape inconsistent with local count");
  }
  const std::size_t min_record = 1 + 16 + 8 + 1 + 16 + 1 + 8ull * dim;
  const std::uint64_t total = static_cast<std::uint64_t>(counts[0]) + counts[1] + counts[2];
  if (min_record == 0 || total > r.remaining() / min_record) throw corrupt("token counts exceed file size");

  // Tokens must appear as globals, then locals, then objects.
  int expected_kind = 0;
  std::uint32_t seen[3] = {0, 0, 0};
  b.tokens.reserve(static_cast<std::size_t>(total));
  for (std::uint64_t i = 0; i < total; ++i) {
    Token t;
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw corrupt("bad token kind");
    while (expected_kind < 3 && seen[expected_kind] == counts[expected_kind]) ++expected_kind;
    if (kind != expected_kind) throw corrupt("token kinds out of order");
    ++seen[kind];
    t.kind = static_cast<TokenKind>(kind);
    t.meta.source_index = r.i32();
    t.meta.grid_row = r.i32();
    t.meta.grid_col = r.i32();
    t.meta.mask_id = r.i32();
    t.meta.confidence = r.f64();
    const std::uint8_t bg = r.u8();
    if (bg > 1) throw corrupt("bad background flag");
    t.meta.background = bg == 1;
    t.meta.final_loss = r.f64();
    t.meta.map_iou = r.f64();
    const std::uint8_t has_pos = r.u8();
    if (has_pos > 1) throw corrupt("bad positional flag");
    if (has_pos) t.meta.pos_embedding = get_vec(r, dim);
    t.embedding = get_vec(r, dim);
    b.tokens.push_back(std::move(t));
  }
  r.expect_end();
  return b;
}

void write_bundle(const TokenBundle& bundle, const std::filesystem::path& path) {
  write_file_bytes(path, encode_bundle(bundle));
}

TokenBundle read_bundle(const std::filesystem::path& path) {
  return decode_bundle(read_file_bytes(path));
}

}  // namespace mgtok
