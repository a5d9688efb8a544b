#pragma once

#include <filesystem>
#include <string>

#include "mgtok/mask_ops.hpp"
#include "mgtok/numerics.hpp"
#include "mgtok/vision_encoder.hpp"

namespace mgtok::testing {

inline Vec random_vec(Rng& rng, int n, double scale = 1.0) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

inline VecGrid random_grid(Rng& rng, std::size_t rows, std::size_t cols, int dim) {
  VecGrid g(rows, cols);
  for (Vec& v : g) v = random_vec(rng, dim);
  return g;
}

inline Image random_image(Rng& rng, int side) {
  Image img(static_cast<std::size_t>(side), static_cast<std::size_t>(side));
  for (Rgb& p : img) p = {rng.uniform(), rng.uniform(), rng.uniform()};
  return img;
}

/// Small encoder config for fast tests: 16 px images, 4 x 4 patch grid.
inline EncoderConfig tiny_encoder(std::uint64_t seed = 3) { return EncoderConfig{16, 4, 16, 1, 2, seed}; }

inline BitGrid random_rect_mask(Rng& rng, int side) {
  BitGrid m(static_cast<std::size_t>(side), static_cast<std::size_t>(side), 0);
  const int x0 = rng.between(0, side - 2);
  const int y0 = rng.between(0, side - 2);
  const int x1 = rng.between(x0 + 1, side);
  const int y1 = rng.between(y0 + 1, side);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
  return m;
}

inline BitGrid random_blob_mask(Rng& rng, int side, double density) {
  BitGrid m(static_cast<std::size_t>(side), static_cast<std::size_t>(side), 0);
  for (auto& b : m) b = rng.bernoulli(density) ? 1 : 0;
  return m;
}

/// Proposals that overlap each other at a wide range of IoUs: rectangles and
/// blobs, plus shifted copies. Confidences come from a coarse grid so ties occur.
inline MaskSet random_maskset(Rng& rng, int side, std::size_t n) {
  MaskSet set;
  set.image_side = side;
  for (std::size_t i = 0; i < n; ++i) {
    MaskProposal p;
    if (i > 0 && rng.bernoulli(0.4)) {
      const BitGrid& src = set.proposals[rng.below(set.proposals.size())].mask;
      const int dx = rng.between(-2, 2), dy = rng.between(-2, 2);
      p.mask = BitGrid(src.rows(), src.cols(), 0);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          const int sx = x - dx, sy = y - dy;
          if (sx >= 0 && sy >= 0 && sx < side && sy < side)
            p.mask(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                src(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        }
    } else if (rng.bernoulli(0.8)) {
      p.mask = random_rect_mask(rng, side);
    } else {
      p.mask = random_blob_mask(rng, side, rng.uniform(0.05, 0.6));
    }
    p.bbox = tight_bbox(p.mask);
    p.confidence = static_cast<double>(rng.between(0, 20)) / 20.0;
    set.proposals.push_back(std::move(p));
  }
  return set;
}

/// Per-test scratch directory under the system temp dir, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mgtok_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mgtok::testing
