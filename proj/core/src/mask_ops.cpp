#include "mgtok/mask_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mgtok {

namespace {

void check_same_shape(const BitGrid& a, const BitGrid& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw_shape("mask dimensions differ: " + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()));
  }
}

BitGrid filled_box(std::size_t side, const BBox& box) {
  BitGrid m(side, side, 0);
  for (int y = box.y_min; y < box.y_max; ++y)
    for (int x = box.x_min; x < box.x_max; ++x) m(y, x) = 1;
  return m;
}

// Nearest-neighbour resample of `src` shifted by (dx, dy) and scaled by
// `scale` about the source bbox center.
BitGrid transform_mask(const BitGrid& src, const BBox& box, int dx, int dy, double scale) {
  const auto side = static_cast<int>(src.rows());
  const double cx = box.center_x();
  const double cy = box.center_y();
  BitGrid out(src.rows(), src.cols(), 0);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double sx = cx + (x + 0.5 - dx - cx) / scale - 0.5;
      const double sy = cy + (y + 0.5 - dy - cy) / scale - 0.5;
      const int ix = static_cast<int>(std::lround(sx));
      const int iy = static_cast<int>(std::lround(sy));
      if (ix >= 0 && iy >= 0 && ix < side && iy < side) out(y, x) = src(iy, ix);
    }
  }
  return out;
}

BitGrid morph(const BitGrid& m, bool dilate) {
  const auto side = static_cast<int>(m.rows());
  BitGrid out = m;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const int dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (const auto& d : dirs) {
        const int nx = x + d[0];
        const int ny = y + d[1];
        const bool inside = nx >= 0 && ny >= 0 && nx < side && ny < side;
        const std::uint8_t nb = inside ? m(ny, nx) : 0;
        if (dilate && nb) out(y, x) = 1;
        if (!dilate && !nb) out(y, x) = 0;
      }
    }
  }
  return out;
}

}  // namespace

BBox tight_bbox(const BitGrid& mask) {
  int x0 = static_cast<int>(mask.cols()), y0 = static_cast<int>(mask.rows()), x1 = -1, y1 = -1;
  for (std::size_t y = 0; y < mask.rows(); ++y) {
    for (std::size_t x = 0; x < mask.cols(); ++x) {
      if (!mask(y, x)) continue;
      x0 = std::min(x0, static_cast<int>(x));
      y0 = std::min(y0, static_cast<int>(y));
      x1 = std::max(x1, static_cast<int>(x));
      y1 = std::max(y1, static_cast<int>(y));
    }
  }
  if (x1 < 0) return {};
  return {x0, y0, x1 + 1, y1 + 1};
}

std::size_t mask_area(const BitGrid& mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
}

BitGrid pixelwise_or(const BitGrid& a, const BitGrid& b) {
  check_same_shape(a, b);
  BitGrid out(a.rows(), a.cols(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] || b[i]) ? 1 : 0;
  return out;
}

BitGrid pixelwise_not(const BitGrid& a) {
  BitGrid out(a.rows(), a.cols(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] ? 0 : 1;
  return out;
}

double iou(const BitGrid& a, const BitGrid& b) {
  check_same_shape(a, b);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0;
    const bool y = b[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

MaskSet synth_proposals(std::span<const BitGrid> object_masks, std::size_t n,
                        const JitterParams& jitter, Rng& rng) {
  if (object_masks.empty()) throw_invalid("synth_proposals needs at least one object mask");
  if (n < object_masks.size()) {
    throw_invalid("synth_proposals: n = " + std::to_string(n) + " is below the object count " +
                  std::to_string(object_masks.size()));
  }
  const std::size_t side = object_masks.front().rows();
  for (const BitGrid& m : object_masks) {
    if (m.rows() != side || m.cols() != side) throw_shape("object masks must share one square size");
    if (mask_area(m) == 0) throw_invalid("object masks must be nonempty");
  }

  MaskSet set;
  set.image_side = static_cast<int>(side);
  set.proposals.reserve(n);
  constexpr int kMaxAttempts = 8;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = i < object_masks.size() ? i : rng.below(object_masks.size());
    const BitGrid& source = object_masks[src];
    const BBox box = tight_bbox(source);
    BitGrid candidate = source;
    double shrink = 1.0;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt, shrink *= 0.5) {
      const int max_dx = static_cast<int>(std::floor(jitter.max_shift * shrink * box.width()));
      const int max_dy = static_cast<int>(std::floor(jitter.max_shift * shrink * box.height()));
      const int dx = rng.between(-max_dx, max_dx);
      const int dy = rng.between(-max_dy, max_dy);
      const double scale = 1.0 + jitter.max_scale * shrink * rng.uniform(-1.0, 1.0);
      BitGrid m = transform_mask(source, box, dx, dy, scale);
      if (rng.bernoulli(jitter.boundary_noise * shrink)) m = morph(m, rng.bernoulli(0.5));
      if (mask_area(m) > 0 && iou(m, source) > jitter.min_iou) {
        candidate = std::move(m);
        break;
      }
    }
    MaskProposal p;
    p.confidence = iou(candidate, source) * (1.0 - jitter.confidence_noise * rng.uniform());
    p.bbox = tight_bbox(candidate);
    p.mask = std::move(candidate);
    p.source_object = static_cast<int>(src);
    set.proposals.push_back(std::move(p));
  }
  return set;
}

MaskSet add_background(MaskSet set) {
  const auto side = static_cast<std::size_t>(set.image_side);
  BitGrid cover(side, side, 0);
  for (const MaskProposal& p : set.proposals) cover = pixelwise_or(cover, p.mask);
  MaskProposal bg;
  bg.mask = pixelwise_not(cover);
  bg.bbox = {0, 0, set.image_side, set.image_side};
  bg.confidence = 1.0;
  bg.source_object = -1;
  set.background = std::move(bg);
  return set;
}

std::vector<std::size_t> confidence_order(const MaskSet& set) {
  std::vector<std::size_t> order(set.proposals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return set.proposals[a].confidence > set.proposals[b].confidence;
  });
  return order;
}

std::vector<std::size_t> dedup_survivors(const MaskSet& set, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw_invalid("IoU threshold must lie in (0, 1]");
  std::vector<std::size_t> kept;
  for (std::size_t idx : confidence_order(set)) {
    const BitGrid& cand = set.proposals[idx].mask;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return iou(cand, set.proposals[k].mask) >= threshold;
    });
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::vector<std::size_t> dedup_ranking(const MaskSet& set, double threshold) {
  std::vector<std::size_t> ranking = dedup_survivors(set, threshold);
  std::vector<std::uint8_t> kept(set.proposals.size(), 0);
  for (std::size_t idx : ranking) kept[idx] = 1;
  for (std::size_t idx : confidence_order(set)) {
    if (!kept[idx]) ranking.push_back(idx);
  }
  return ranking;
}

MaskSet dedup_by_iou(const MaskSet& set, double threshold) {
  MaskSet out;
  out.image_side = set.image_side;
  out.background = set.background;
  for (std::size_t idx : dedup_survivors(set, threshold)) out.proposals.push_back(set.proposals[idx]);
  return out;
}

MaskSet prune_by_confidence(const MaskSet& set, std::size_t keep) {
  MaskSet out;
  out.image_side = set.image_side;
  out.background = set.background;
  const auto order = confidence_order(set);
  for (std::size_t i = 0; i < std::min(keep, order.size()); ++i)
    out.proposals.push_back(set.proposals[order[i]]);
  return out;
}

MaskSet tiled_masks(int image_side, int grid) {
  if (grid < 1) throw_invalid("tile grid must be >= 1");
  if (image_side < grid) throw_invalid("image smaller than tile grid");
  MaskSet set;
  set.image_side = image_side;
  const int tile = image_side / grid;
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      BBox box{c * tile, r * tile, c == grid - 1 ? image_side : (c + 1) * tile,
               r == grid - 1 ? image_side : (r + 1) * tile};
      MaskProposal p;
      p.mask = filled_box(static_cast<std::size_t>(image_side), box);
      p.bbox = box;
      p.confidence = 1.0;
      set.proposals.push_back(std::move(p));
    }
  }
  return set;
}

MaskSet bbox_masks(const MaskSet& set) {
  MaskSet out = set;
  for (MaskProposal& p : out.proposals) {
    p.bbox = tight_bbox(p.mask);
    p.mask = filled_box(p.mask.rows(), p.bbox);
  }
  return out;
}

}  // namespace mgtok
