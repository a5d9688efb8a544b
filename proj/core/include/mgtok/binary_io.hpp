#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mgtok {

using FourCC = std::array<char, 4>;

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Appends little-endian scalars to a growing byte buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v);
  void str(std::string_view s);
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader. Every overrun raises a
/// FormatError(truncated) carrying the offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64();
  std::string str(std::size_t max_len = 1 << 16);
  std::span<const std::uint8_t> bytes(std::size_t n);

  /// Reads a count and rejects it if the remaining bytes cannot possibly hold
  /// `count * min_item_bytes`.
  std::size_t count(std::size_t min_item_bytes);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// Container shared by every binary file the project writes:
//
//   magic[4] | u32 version | u64 payload_size | payload | u32 crc32
//
// The CRC covers every byte before it.
std::vector<std::uint8_t> seal_container(const FourCC& magic, std::uint32_t version,
                                         std::span<const std::uint8_t> payload);

/// Validates magic, version, length and checksum; returns the payload view.
std::span<const std::uint8_t> open_container(std::span<const std::uint8_t> file,
                                             const FourCC& magic, std::uint32_t version);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace mgtok
