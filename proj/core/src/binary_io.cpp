#include "mgtok/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "mgtok/error.hpp"

namespace mgtok {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::shape: return "shape";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::checksum_mismatch: return "checksum_mismatch";
    case ErrorCode::corrupt: return "corrupt";
    case ErrorCode::io: return "io";
    case ErrorCode::config: return "config";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::infeasible_plan: return "infeasible_plan";
  }
  return "unknown";
}

void throw_shape(const std::string& message) { throw Error(ErrorCode::shape, message); }
void throw_invalid(const std::string& message) { throw Error(ErrorCode::invalid_argument, message); }

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteReader::need(std::size_t n) const {
  if (n > data_.size() - pos_) {
    throw FormatError(ErrorCode::truncated,
                      "unexpected end of data: need " + std::to_string(n) + " bytes, have " +
                          std::to_string(data_.size() - pos_),
                      pos_);
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str(std::size_t max_len) {
  const std::uint32_t n = u32();
  if (n > max_len) {
    throw FormatError(ErrorCode::corrupt, "string length " + std::to_string(n) + " exceeds limit",
                      pos_);
  }
  auto b = bytes(n);
  return std::string(b.begin(), b.end());
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  need(n);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::size_t ByteReader::count(std::size_t min_item_bytes) {
  const std::size_t at = pos_;
  const std::uint32_t n = u32();
  if (min_item_bytes > 0 && n > remaining() / min_item_bytes) {
    throw FormatError(ErrorCode::corrupt,
                      "element count " + std::to_string(n) + " cannot fit in remaining data", at);
  }
  return n;
}

void ByteReader::expect_end() const {
  if (pos_ != data_.size()) {
    throw FormatError(ErrorCode::corrupt,
                      std::to_string(data_.size() - pos_) + " trailing bytes after payload", pos_);
  }
}

namespace {
constexpr std::size_t kHeaderBytes = 4 + 4 + 8;
constexpr std::size_t kTrailerBytes = 4;
}  // namespace

std::vector<std::uint8_t> seal_container(const FourCC& magic, std::uint32_t version,
                                         std::span<const std::uint8_t> payload) {
  ByteWriter w;
  for (char c : magic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(version);
  w.u64(payload.size());
  w.bytes(payload);
  const std::uint32_t crc = crc32(w.buffer());
  w.u32(crc);
  return w.take();
}

std::span<const std::uint8_t> open_container(std::span<const std::uint8_t> file,
                                             const FourCC& magic, std::uint32_t version) {
  if (file.size() < kHeaderBytes + kTrailerBytes) {
    throw FormatError(ErrorCode::truncated,
                      "file too short for container header (" + std::to_string(file.size()) +
                          " bytes)",
                      file.size());
  }
  if (std::memcmp(file.data(), magic.data(), 4) != 0) {
    throw FormatError(ErrorCode::bad_magic,
                      "bad magic, expected '" + std::string(magic.begin(), magic.end()) + "'", 0);
  }
  ByteReader header(file.subspan(4, kHeaderBytes - 4));
  const std::uint32_t got_version = header.u32();
  const std::uint64_t payload_size = header.u64();
  if (payload_size != file.size() - kHeaderBytes - kTrailerBytes) {
    const ErrorCode code = payload_size > file.size() - kHeaderBytes - kTrailerBytes
                               ? ErrorCode::truncated
                               : ErrorCode::corrupt;
    throw FormatError(code,
                      "payload size field " + std::to_string(payload_size) +
                          " disagrees with file size " + std::to_string(file.size()),
                      8);
  }
  const std::size_t body = file.size() - kTrailerBytes;
  ByteReader trailer(file.subspan(body));
  const std::uint32_t stored = trailer.u32();
  if (stored != crc32(file.first(body))) {
    throw FormatError(ErrorCode::checksum_mismatch, "checksum mismatch", body);
  }
  // Version is checked after the CRC so that a flipped version byte reports
  // as damage rather than as a genuinely newer file.
  if (got_version != version) {
    throw FormatError(ErrorCode::unsupported_version,
                      "unsupported version " + std::to_string(got_version) + " (expected " +
                          std::to_string(version) + ")",
                      4);
  }
  return file.subspan(kHeaderBytes, static_cast<std::size_t>(payload_size));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io, "short write to " + path.string());
}

}  // namespace mgtok
