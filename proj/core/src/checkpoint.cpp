#include "mgtok/checkpoint.hpp"

#include "mgtok/binary_io.hpp"

namespace mgtok {

namespace {

constexpr FourCC kMagic{'M', 'G', 'C', 'K'};
constexpr std::uint64_t kMaxSide = 1u << 20;

void put_store(ByteWriter& w, const ParamStore& p) {
  w.u32(static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    w.str(p.name(i));
    w.u64(static_cast<std::uint64_t>(p[i].rows()));
    w.u64(static_cast<std::uint64_t>(p[i].cols()));
    for (Eigen::Index k = 0; k < p[i].size(); ++k) w.f64(p[i].data()[k]);
  }
}

// Reads values into a store built from the stored configs; names and shapes
// must agree block by block.
void get_store(ByteReader& r, ParamStore& p) {
  const std::size_t n = r.count(4 + 16);
  if (n != p.size()) {
    throw FormatError(ErrorCode::corrupt, "parameter block count does not match the stored config", r.offset());
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (name != p.name(i) || rows > kMaxSide || cols > kMaxSide ||
        rows != static_cast<std::uint64_t>(p[i].rows()) || cols != static_cast<std::uint64_t>(p[i].cols())) {
      throw FormatError(ErrorCode::corrupt, "parameter block '" + name + "' does not match the stored config", r.offset());
    }
    for (Eigen::Index k = 0; k < p[i].size(); ++k) p[i].data()[k] = r.f64();
  }
}

int get_dim(ByteReader& r, int lo, int hi, const char* what) {
  const std::int32_t v = r.i32();
  if (v < lo || v > hi) throw FormatError(ErrorCode::corrupt, std::string("implausible ") + what, r.offset());
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const ProjectorConfig& pc = ckpt.model.projector.config();
  const DecoderConfig& dc = ckpt.model.decoder.config();
  ByteWriter w;
  w.i32(pc.in_dim);
  w.i32(pc.hidden_dim);
  w.i32(pc.out_dim);
  w.u64(pc.seed);
  w.i32(dc.vocab_size);
  w.i32(dc.model_dim);
  w.i32(dc.layers);
  w.i32(dc.heads);
  w.i32(dc.ff_dim);
  w.i32(dc.context);
  w.u64(dc.seed);
  put_store(w, ckpt.model.projector.params());
  put_store(w, ckpt.model.decoder.params());
  w.str(ckpt.note);
  return seal_container(kMagic, kCheckpointFileVersion, w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> file) {
  ByteReader r(open_container(file, kMagic, kCheckpointFileVersion));
  ProjectorConfig pc;
  pc.in_dim = get_dim(r, 1, 4096, "projector input dim");
  pc.hidden_dim = get_dim(r, 1, 4096, "projector hidden dim");
  pc.out_dim = get_dim(r, 1, 4096, "projector output dim");
  pc.seed = r.u64();
  DecoderConfig dc;
  dc.vocab_size = get_dim(r, special::count, 1 << 16, "vocabulary size");
  dc.model_dim = get_dim(r, 1, 4096, "model dim");
  dc.layers = get_dim(r, 0, 64, "layer count");
  dc.heads = get_dim(r, 1, 64, "head count");
  dc.ff_dim = get_dim(r, 1, 16384, "feed-forward dim");
  dc.context = get_dim(r, 1, 1 << 16, "context length");
  dc.seed = r.u64();
  Checkpoint ckpt;
  try {
    dc.validate();
    ckpt.model.projector = Projector(pc);
    ckpt.model.decoder = ToyDecoder(dc);
  } catch (const Error& e) {
    throw FormatError(ErrorCode::corrupt, std::string("stored config rejected: ") + e.what(), r.offset());
  }
  if (pc.out_dim != dc.model_dim) throw FormatError(ErrorCode::corrupt, "projector output does not match model dim", r.offset());
  get_store(r, ckpt.model.projector.params());
  get_store(r, ckpt.model.decoder.params());
  ckpt.note = r.str(1u << 24);
  r.expect_end();
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

std::uint32_t model_checksum(const VlmModel& model) {
  ByteWriter w;
  w.u32(model.projector.params().checksum());
  w.u32(model.decoder.params().checksum());
  return crc32(w.buffer());
}

}  // namespace mgtok
