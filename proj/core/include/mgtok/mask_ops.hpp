#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mgtok/numerics.hpp"

namespace mgtok {

/// Half-open pixel box: x in [x_min, x_max), y in [y_min, y_max).
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  long area() const { return static_cast<long>(width()) * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct MaskProposal {
  BitGrid mask;
  BBox bbox;
  double confidence = 1.0;
  /// Index of the ground-truth object this proposal was derived from, or -1.
  int source_object = -1;
};

struct MaskSet {
  std::vector<MaskProposal> proposals;
  std::optional<MaskProposal> background;
  int image_side = 0;

  std::size_t member_count() const { return proposals.size() + (background ? 1 : 0); }
};

/// Tight bounding box of the set pixels; all zeros for an empty mask.
BBox tight_bbox(const BitGrid& mask);
std::size_t mask_area(const BitGrid& mask);
BitGrid pixelwise_or(const BitGrid& a, const BitGrid& b);
BitGrid pixelwise_not(const BitGrid& a);

/// |a AND b| / |a OR b|, 0 when both are empty.
double iou(const BitGrid& a, const BitGrid& b);

struct JitterParams {
  /// Maximum translation as a fraction of the object's bbox side.
  double max_shift = 0.2;
  /// Maximum relative scale change.
  double max_scale = 0.2;
  /// Probability of a one-pixel erosion or dilation of the boundary.
  double boundary_noise = 0.5;
  /// Confidence is IoU times uniform(1 - confidence_noise, 1).
  double confidence_noise = 0.2;
  /// Jittered copies must keep IoU above this against their source.
  double min_iou = 0.3;

  static JitterParams none() { return {0.0, 0.0, 0.0, 0.0, 0.3}; }
};

/// Oversampled proposal set built from ground-truth object masks. The first
/// object_masks.size() proposals cover every object once; the rest are
/// jittered duplicates of randomly chosen objects.
MaskSet synth_proposals(std::span<const BitGrid> object_masks, std::size_t n,
                        const JitterParams& jitter, Rng& rng);

/// Appends NOT(OR of proposals) as the background member. Its bbox is the
/// whole image by convention and its confidence is 1.
MaskSet add_background(MaskSet set);

/// Greedy suppression in descending confidence (ties: lower index first).
/// Survivors come out in confidence order.
MaskSet dedup_by_iou(const MaskSet& set, double threshold = 0.5);

/// Keeps the `keep` most confident proposals; background is kept on top.
MaskSet prune_by_confidence(const MaskSet& set, std::size_t keep);
/// Indices of the proposals dedup_by_iou keeps, in the same order.
std::vector<std::size_t> dedup_survivors(const MaskSet& set, double threshold = 0.5);
/// Every proposal index: the dedup survivors first, then the suppressed
/// proposals, each part in descending confidence order. A fixed budget taken
/// from the front holds as many distinct masks as the set allows.
std::vector<std::size_t> dedup_ranking(const MaskSet& set, double threshold = 0.5);

/// grid x grid rectangular partition of the image; the last row/column of
/// tiles absorbs any remainder.
MaskSet tiled_masks(int image_side, int grid);

/// Replaces every proposal mask with its filled bbox.
MaskSet bbox_masks(const MaskSet& set);

/// Proposal indices sorted by descending confidence, ties by index.
std::vector<std::size_t> confidence_order(const MaskSet& set);

}  // namespace mgtok
