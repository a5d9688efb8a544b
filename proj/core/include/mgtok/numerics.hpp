#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mgtok/error.hpp"

namespace mgtok {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Dense row-major 2-D grid. Value type is anything copyable: scalars, bits,
/// colors or whole embedding vectors.
template <class T>
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(std::size_t rows, std::size_t cols, const T& fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid2D(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw_shape("grid data length " + std::to_string(data_.size()) + " != " +
                  std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  friend bool operator==(const Grid2D& a, const Grid2D& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using VecGrid = Grid2D<Vec>;
using ScalarGrid = Grid2D<double>;
using BitGrid = Grid2D<std::uint8_t>;

bool all_finite(const Vec& v);
bool all_finite(const VecGrid& g);
bool bitwise_equal(const Vec& a, const Vec& b);

/// Seeded PRNG: mt19937_64 underneath, with distributions implemented here so
/// the stream is identical across standard libraries.
///
/// Child streams: Rng(seed).split(k) is seeded with seed XOR splitmix64(k).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::size_t below(std::size_t n);
  /// Uniform integer in [lo, hi] inclusive.
  int between(int lo, int hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  Rng split(std::uint64_t stream_id) const;

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// k x k average pooling of a grid of vectors. Accumulation is row-major
/// within each block.
VecGrid avg_pool_2d(const VecGrid& grid, std::size_t kernel);
VecGrid max_pool_2d(const VecGrid& grid, std::size_t kernel);

/// Central-difference gradient of f at x.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||), with 0/0 treated as 0.
double relative_error(const Vec& a, const Vec& b);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items are
/// claimed dynamically; callers must write results into per-index slots so
/// the outcome does not depend on scheduling.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

std::size_t default_workers();

}  // namespace mgtok
