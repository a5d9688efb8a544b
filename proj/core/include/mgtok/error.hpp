#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mgtok {

enum class ErrorCode {
  shape,
  invalid_argument,
  non_finite,
  truncated,
  bad_magic,
  unsupported_version,
  checksum_mismatch,
  corrupt,
  io,
  config,
  divergence,
  infeasible_plan,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base error for everything the library throws. The code is stable and
/// meant for programmatic handling; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when a numeric routine hits NaN/Inf. `index` is the coordinate
/// (finite differences) or the iteration (optimizers) that failed.
class NumericError : public Error {
 public:
  NumericError(const std::string& message, std::size_t index)
      : Error(ErrorCode::non_finite, message), index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Malformed or damaged file. `offset` is the byte position where decoding
/// gave up (0 when not meaningful).
class FormatError : public Error {
 public:
  FormatError(ErrorCode code, const std::string& message, std::size_t offset = 0)
      : Error(code, message), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

[[noreturn]] void throw_shape(const std::string& message);
[[noreturn]] void throw_invalid(const std::string& message);

}  // namespace mgtok
