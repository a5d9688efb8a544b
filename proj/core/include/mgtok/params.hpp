#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgtok/numerics.hpp"

namespace mgtok {

/// Named list of dense parameter blocks. Vectors are stored as one-column
/// matrices so every block flattens the same way (column-major).
class ParamStore {
 public:
  std::size_t add(std::string name, Mat value);

  std::size_t size() const { return values_.size(); }
  Mat& operator[](std::size_t i) { return values_[i]; }
  const Mat& operator[](std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::size_t scalar_count() const;

  Vec flatten() const;
  void assign(const Vec& flat);
  ParamStore zeros_like() const;
  void set_zero();
  void add_scaled(const ParamStore& other, double scale);
  double squared_norm() const;
  /// CRC32 of every value's bit pattern, in order.
  std::uint32_t checksum() const;
  bool same_shapes(const ParamStore& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
};

}  // namespace mgtok
