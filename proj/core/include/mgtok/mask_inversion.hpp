#pragma once

#include <cstddef>
#include <vector>

#include "mgtok/mask_ops.hpp"
#include "mgtok/numerics.hpp"
#include "mgtok/vision_encoder.hpp"

namespace mgtok {

enum class InversionInit { cls, zero };
enum class InversionLoss { mse, cross_entropy };

struct InversionConfig {
  int steps = 50;
  double step_size = 20.0;
  InversionInit init = InversionInit::cls;
  /// Weight of ||q - q_init||^2.
  double reg_weight = 1e-3;
  InversionLoss loss = InversionLoss::cross_entropy;
  /// Halve the step on a loss increase, at most max_halvings times; a step
  /// that still increases the loss is rejected.
  bool backtracking = true;
  int max_halvings = 10;

  void validate() const;
};

/// Embedding whose explainability map reproduces one mask.
struct ObjectToken {
  Vec embedding;
  Vec pos_embedding;
  int source_mask_id = -1;
  bool is_background = false;
  double confidence = 0.0;
  BBox bbox;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double initial_mass = 0.0;  // map mass inside the mask before optimizing
  double final_mass = 0.0;
  double map_iou_after = 0.0;
};

/// Fraction of covered pixels in each cell of a grid_side x grid_side grid.
ScalarGrid downsample_mask(const BitGrid& mask, int grid_side);

/// Cell fractions normalized to a distribution; uniform for an empty mask.
ScalarGrid mask_target(const BitGrid& mask, int grid_side);

/// L(q) = loss(explain(features, q), target) + reg_weight * ||q - anchor||^2
class InversionObjective {
 public:
  InversionObjective(const ImageFeatureSet& features, ScalarGrid target, Vec anchor,
                     InversionLoss loss, double reg_weight);

  double value(const Vec& query) const;
  Vec gradient(const Vec& query) const;

 private:
  const ImageFeatureSet* features_;
  ScalarGrid target_;
  Vec anchor_;
  InversionLoss loss_;
  double reg_weight_;
};

/// Sum of map weights over cells the mask touches.
double mass_inside(const ScalarGrid& weights, const ScalarGrid& cell_fractions);

/// IoU between the |support| highest-weight cells and the mask's support.
double map_support_iou(const ScalarGrid& weights, const ScalarGrid& cell_fractions);

ObjectToken invert_mask(const BitGrid& mask, const ImageFeatureSet& features,
                        const InversionConfig& cfg);

/// Inverts every member of the set (proposals in order, then background) in
/// batched steps. Results do not depend on `workers`.
std::vector<ObjectToken> invert_all(const MaskSet& masks, const ImageFeatureSet& features,
                                    const InversionConfig& cfg, std::size_t workers = 1);

/// Sinusoidal code of the bbox center. The first dim/2 entries encode the
/// normalized x center, the rest the y center, as interleaved sin/cos pairs
/// with geometrically spaced frequencies.
Vec positional_embedding(const BBox& bbox, int image_side, int dim);

ObjectToken attach_position(ObjectToken token, const Vec& pe);

}  // namespace mgtok
