#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mgtok/numerics.hpp"

namespace mgtok {

using Rgb = std::array<double, 3>;
using Image = Grid2D<Rgb>;

struct EncoderConfig {
  int image_side = 32;
  int patch_size = 4;
  int embed_dim = 32;
  int layers = 2;
  int heads = 4;
  std::uint64_t seed = 0;

  int grid_side() const { return image_side / patch_size; }
  int patch_count() const { return grid_side() * grid_side(); }
  /// Throws ErrorCode::config on an inconsistent configuration.
  void validate() const;
};

/// Output of one encoder pass: the summary token, the P x P patch tokens and
/// the final-layer key projection of every patch.
struct ImageFeatureSet {
  Vec cls;
  VecGrid patches;
  VecGrid keys;
  /// Same keys as a (P*P x embed_dim) matrix, row-major over the grid.
  Mat key_matrix;
  EncoderConfig config;
};

/// Relevance of every patch to a query embedding; sums to 1.
struct ExplainabilityMap {
  ScalarGrid weights;
  Vec query;
};

/// Small pre-norm vision transformer with seeded random weights. Weights are
/// fixed at construction and never modified afterwards.
class VisionEncoder {
 public:
  explicit VisionEncoder(const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }
  ImageFeatureSet encode(const Image& pixels) const;
  /// CRC32 over every weight, in declaration order.
  std::uint32_t weights_checksum() const;

 private:
  struct Block {
    Vec ln1_gain, ln1_bias;
    Mat wq, wk, wv, wo;
    Vec bo;
    Vec ln2_gain, ln2_bias;
    Mat w1, w2;
    Vec b1, b2;
  };

  EncoderConfig config_;
  Mat patch_proj_;  // (patch_size^2 * 3) x embed_dim
  Vec patch_bias_;
  Vec cls_token_;
  Mat position_;  // (P*P) x embed_dim, fixed sinusoid
  std::vector<Block> blocks_;
  Vec final_gain_, final_bias_;
};

/// Convenience wrapper: builds the seeded encoder and runs it once.
ImageFeatureSet encode_image(const Image& pixels, const EncoderConfig& config);

/// 2-D sinusoidal table for a side x side grid: the first half of each row
/// encodes the grid row, the second half the grid column.
Mat sincos_position_table(int side, int dim);

/// softmax_j(query . key_j / sqrt(dim)) over all patches.
ExplainabilityMap explain(const ImageFeatureSet& features, const Vec& query);

/// Gradient of a scalar loss w.r.t. the query, given dLoss/dweights.
Vec explain_backward(const ImageFeatureSet& features, const Vec& query,
                     const ScalarGrid& upstream_grad);

}  // namespace mgtok
