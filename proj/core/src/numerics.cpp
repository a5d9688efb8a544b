#include "mgtok/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

namespace mgtok {

bool all_finite(const Vec& v) { return v.allFinite(); }

bool all_finite(const VecGrid& g) {
  return std::all_of(g.begin(), g.end(), [](const Vec& v) { return v.allFinite(); });
}

bool bitwise_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         (a.size() == 0 ||
          std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw_invalid("Rng::below(0)");
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

int Rng::between(int lo, int hi) {
  if (hi < lo) throw_invalid("Rng::between with hi < lo");
  return lo + static_cast<int>(below(static_cast<std::size_t>(hi - lo) + 1));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::split(std::uint64_t stream_id) const { return Rng(seed_ ^ splitmix64(stream_id)); }

namespace {

void check_pool_shape(const VecGrid& grid, std::size_t kernel) {
  if (kernel == 0) throw_shape("pooling kernel must be >= 1");
  if (grid.rows() % kernel != 0 || grid.cols() % kernel != 0) {
    throw_shape("pooling kernel " + std::to_string(kernel) + " does not divide grid " +
                std::to_string(grid.rows()) + "x" + std::to_string(grid.cols()));
  }
}

template <class Reduce>
VecGrid pool(const VecGrid& grid, std::size_t kernel, Reduce reduce) {
  check_pool_shape(grid, kernel);
  VecGrid out(grid.rows() / kernel, grid.cols() / kernel);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      Vec acc = grid(r * kernel, c * kernel);
      for (std::size_t i = 0; i < kernel; ++i) {
        for (std::size_t j = 0; j < kernel; ++j) {
          if (i == 0 && j == 0) continue;
          const Vec& v = grid(r * kernel + i, c * kernel + j);
          if (v.size() != acc.size()) throw_shape("pooling over vectors of unequal dimension");
          reduce(acc, v);
        }
      }
      out(r, c) = std::move(acc);
    }
  }
  return out;
}

}  // namespace

VecGrid avg_pool_2d(const VecGrid& grid, std::size_t kernel) {
  VecGrid out = pool(grid, kernel, [](Vec& acc, const Vec& v) { acc += v; });
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  for (Vec& v : out) v *= inv;
  return out;
}

VecGrid max_pool_2d(const VecGrid& grid, std::size_t kernel) {
  return pool(grid, kernel, [](Vec& acc, const Vec& v) { acc = acc.cwiseMax(v); });
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw_invalid("finite difference step must be positive");
  Vec grad(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value while differencing coordinate " +
                             std::to_string(i),
                         static_cast<std::size_t>(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw_shape("relative_error on vectors of unequal size");
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

std::size_t default_workers() {
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(n);
            return;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace mgtok
