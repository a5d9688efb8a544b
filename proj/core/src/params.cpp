#include "mgtok/params.hpp"

#include "mgtok/binary_io.hpp"

namespace mgtok {

std::size_t ParamStore::add(std::string name, Mat value) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Mat& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

Vec ParamStore::flatten() const {
  Vec flat(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index pos = 0;
  for (const Mat& m : values_) {
    flat.segment(pos, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
    pos += m.size();
  }
  return flat;
}

void ParamStore::assign(const Vec& flat) {
  if (static_cast<std::size_t>(flat.size()) != scalar_count()) throw_shape("flat parameter size mismatch");
  Eigen::Index pos = 0;
  for (Mat& m : values_) {
    Eigen::Map<Vec>(m.data(), m.size()) = flat.segment(pos, m.size());
    pos += m.size();
  }
}

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (std::size_t i = 0; i < values_.size(); ++i)
    z.add(names_[i], Mat::Zero(values_[i].rows(), values_[i].cols()));
  return z;
}

void ParamStore::set_zero() {
  for (Mat& m : values_) m.setZero();
}

void ParamStore::add_scaled(const ParamStore& other, double scale) {
  if (!same_shapes(other)) throw_shape("parameter stores differ in shape");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

double ParamStore::squared_norm() const {
  double s = 0.0;
  for (const Mat& m : values_) s += m.squaredNorm();
  return s;
}

std::uint32_t ParamStore::checksum() const {
  ByteWriter w;
  for (const Mat& m : values_)
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
  return crc32(w.buffer());
}

bool ParamStore::same_shapes(const ParamStore& other) const {
  if (values_.size() != other.values_.size()) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i].rows() != other.values_[i].rows() || values_[i].cols() != other.values_[i].cols())
      return false;
  }
  return true;
}

}  // namespace mgtok
