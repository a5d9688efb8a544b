#include <gtest/gtest.h>

#include <cmath>

#include "mgtok/mask_inversion.hpp"
#include "test_support.hpp"

using namespace mgtok;
using mgtok::testing::random_blob_mask;
using mgtok::testing::random_image;
using mgtok::testing::random_rect_mask;
using mgtok::testing::random_vec;
using mgtok::testing::tiny_encoder;

namespace {

ImageFeatureSet features(std::uint64_t seed) {
  Rng rng(seed);
  return encode_image(random_image(rng, 16), tiny_encoder());
}

BitGrid patch_mask(int side, int patch, int row, int col) {
  BitGrid m(static_cast<std::size_t>(side), static_cast<std::size_t>(side), 0);
  for (int y = row * patch; y < (row + 1) * patch; ++y)
    for (int x = col * patch; x < (col + 1) * patch; ++x) m(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
  return m;
}

}  // namespace

TEST(DownsampleMask, FullMaskIsUniform) {
  const ScalarGrid t = mask_target(BitGrid(16, 16, 1), 4);
  for (double v : t) EXPECT_DOUBLE_EQ(v, 1.0 / 16.0);
}

TEST(DownsampleMask, EmptyMaskIsUniform) {
  const ScalarGrid t = mask_target(BitGrid(16, 16, 0), 4);
  for (double v : t) EXPECT_DOUBLE_EQ(v, 1.0 / 16.0);
}

TEST(DownsampleMask, OnePatchIsOneHot) {
  const ScalarGrid t = mask_target(patch_mask(16, 4, 1, 2), 4);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_DOUBLE_EQ(t[i], i == 6 ? 1.0 : 0.0);
}

TEST(DownsampleMask, HalfCoveredCell) {
  BitGrid m(16, 16, 0);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 2; ++x) m(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
  EXPECT_DOUBLE_EQ(downsample_mask(m, 4)(0, 0), 0.5);
}

TEST(InversionObjective, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (int c = 0; c < 20; ++c) {
    const ImageFeatureSet f = features(100 + static_cast<std::uint64_t>(c));
    const BitGrid mask = c % 2 == 0 ? random_rect_mask(rng, 16) : random_blob_mask(rng, 16, 0.3);
    const auto loss = c % 3 == 0 ? InversionLoss::mse : InversionLoss::cross_entropy;
    const InversionObjective obj(f, mask_target(mask, 4), random_vec(rng, 16), loss, 0.05);
    const Vec q = random_vec(rng, 16);
    const Vec fd = finite_diff_grad([&](const Vec& x) { return obj.value(x); }, q);
    EXPECT_LT(relative_error(obj.gradient(q), fd), 1e-4) << "case " << c;
  }
}

TEST(InvertMask, ZeroStepSizeKeepsInit) {
  const ImageFeatureSet f = features(2);
  InversionConfig cfg;
  cfg.steps = 1;
  cfg.step_size = 0.0;
  cfg.backtracking = false;
  Rng rng(2);
  const ObjectToken t = invert_mask(random_rect_mask(rng, 16), f, cfg);
  EXPECT_TRUE(bitwise_equal(t.embedding, f.cls));
  EXPECT_EQ(t.final_loss, t.initial_loss);
}

TEST(InvertMask, ZeroStepsRejected) {
  InversionConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.steps = 5;
  cfg.step_size = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(InvertMask, OnePatchTargetIsFound) {
  // Regression fixture: the tiny encoder reaches the single target cell.
  const ImageFeatureSet f = features(3);
  const ObjectToken t = invert_mask(patch_mask(16, 4, 2, 1), f, InversionConfig{});
  EXPECT_GT(t.map_iou_after, 0.8);
  EXPECT_GT(t.final_mass, t.initial_mass);
}

TEST(InvertMask, LossNeverIncreases) {
  Rng rng(4);
  for (int c = 0; c < 20; ++c) {
    const ImageFeatureSet f = features(200 + static_cast<std::uint64_t>(c));
    InversionConfig cfg;
    cfg.step_size = rng.uniform(1.0, 200.0);
    cfg.loss = c % 2 == 0 ? InversionLoss::mse : InversionLoss::cross_entropy;
    const ObjectToken t = invert_mask(random_rect_mask(rng, 16), f, cfg);
    EXPECT_LE(t.final_loss, t.initial_loss);
    EXPECT_GE(t.map_iou_after, 0.0);
    EXPECT_LE(t.map_iou_after, 1.0);
  }
}

TEST(InvertMask, Deterministic) {
  const ImageFeatureSet f = features(5);
  Rng rng(5);
  const BitGrid m = random_rect_mask(rng, 16);
  const ObjectToken a = invert_mask(m, f, InversionConfig{});
  const ObjectToken b = invert_mask(m, f, InversionConfig{});
  EXPECT_TRUE(bitwise_equal(a.embedding, b.embedding));
  EXPECT_EQ(a.final_loss, b.final_loss);
}

TEST(InvertMask, ZeroInitStartsFromOrigin) {
  const ImageFeatureSet f = features(6);
  InversionConfig cfg;
  cfg.init = InversionInit::zero;
  cfg.steps = 1;
  cfg.step_size = 0.0;
  Rng rng(6);
  EXPECT_EQ(invert_mask(random_rect_mask(rng, 16), f, cfg).embedding.norm(), 0.0);
}

TEST(InvertMask, MassInsideImprovesOnAverage) {
  Rng rng(7);
  double before = 0.0, after = 0.0;
  for (int c = 0; c < 20; ++c) {
    const ObjectToken t = invert_mask(random_rect_mask(rng, 16), features(300 + static_cast<std::uint64_t>(c)),
                                      InversionConfig{});
    before += t.initial_mass;
    after += t.final_mass;
  }
  EXPECT_GT(after, before);
}

TEST(InvertAll, SingletonEqualsInvertMask) {
  const ImageFeatureSet f = features(8);
  Rng rng(8);
  MaskSet set;
  set.image_side = 16;
  MaskProposal p;
  p.mask = random_rect_mask(rng, 16);
  p.bbox = tight_bbox(p.mask);
  set.proposals.push_back(p);
  const auto all = invert_all(set, f, InversionConfig{});
  const ObjectToken one = invert_mask(p.mask, f, InversionConfig{});
  ASSERT_EQ(all.size(), 1u);
  EXPECT_TRUE(bitwise_equal(all[0].embedding, one.embedding));
}

TEST(InvertAll, EqualsIndependentRunsAndWorkerInvariant) {
  Rng rng(9);
  for (int c = 0; c < 5; ++c) {
    const ImageFeatureSet f = features(400 + static_cast<std::uint64_t>(c));
    MaskSet set = mgtok::testing::random_maskset(rng, 16, 7);
    set = add_background(set);
    const auto serial = invert_all(set, f, InversionConfig{}, 1);
    const auto parallel = invert_all(set, f, InversionConfig{}, 3);
    ASSERT_EQ(serial.size(), 8u);
    for (std::size_t i = 0; i < 8; ++i) {
      const BitGrid& m = i < 7 ? set.proposals[i].mask : set.background->mask;
      const ObjectToken solo = invert_mask(m, f, InversionConfig{});
      EXPECT_LE((serial[i].embedding - solo.embedding).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_TRUE(bitwise_equal(serial[i].embedding, parallel[i].embedding));
    }
    EXPECT_TRUE(serial.back().is_background);
  }
}

TEST(InvertAll, PaperScaleSetAccepted) {
  const ImageFeatureSet f = features(10);
  Rng rng(10);
  MaskSet set = add_background(mgtok::testing::random_maskset(rng, 16, 100));
  InversionConfig cfg;
  cfg.steps = 2;
  EXPECT_EQ(invert_all(set, f, cfg).size(), 101u);
}

TEST(InvertAll, EmptySetRejected) {
  MaskSet set;
  set.image_side = 16;
  EXPECT_THROW(invert_all(set, features(11), InversionConfig{}), Error);
}

TEST(PositionalEmbedding, CenteredBoxHalvesMatch) {
  const Vec pe = positional_embedding(BBox{8, 8, 24, 24}, 32, 16);
  EXPECT_TRUE(bitwise_equal(pe.head(8), pe.tail(8)));
}

TEST(PositionalEmbedding, DependsOnlyOnCenter) {
  EXPECT_TRUE(bitwise_equal(positional_embedding(BBox{10, 10, 14, 14}, 32, 16),
                            positional_embedding(BBox{4, 4, 20, 20}, 32, 16)));
  EXPECT_FALSE(bitwise_equal(positional_embedding(BBox{10, 10, 14, 14}, 32, 16),
                             positional_embedding(BBox{10, 12, 14, 16}, 32, 16)));
}

TEST(PositionalEmbedding, ZeroCenterPattern) {
  const Vec pe = positional_embedding(BBox{0, 0, 0, 0}, 32, 8);
  for (int i = 0; i < 8; i += 2) {
    EXPECT_EQ(pe[i], 0.0);
    EXPECT_EQ(pe[i + 1], 1.0);
  }
}

TEST(PositionalEmbedding, OddDimRejected) {
  EXPECT_THROW(positional_embedding(BBox{0, 0, 4, 4}, 32, 7), Error);
}

TEST(AttachPosition, ZeroAndAdditivity) {
  ObjectToken t;
  t.embedding = (Vec(4) << 1, 2, 3, 4).finished();
  EXPECT_TRUE(bitwise_equal(attach_position(t, Vec::Zero(4)).embedding, t.embedding));
  const Vec pe = (Vec(4) << 0.5, -1, 0.25, 2).finished();
  const ObjectToken once = attach_position(t, pe);
  const ObjectToken twice = attach_position(once, pe);
  EXPECT_TRUE((twice.embedding - once.embedding).isApprox(pe));
  EXPECT_TRUE(bitwise_equal(once.pos_embedding, pe));
  EXPECT_THROW(attach_position(t, Vec::Zero(3)), Error);
}

TEST(AttachPosition, BackgroundUsesImageCenter) {
  const Vec pe = positional_embedding(BBox{0, 0, 32, 32}, 32, 16);
  EXPECT_TRUE(bitwise_equal(pe.head(8), pe.tail(8)));
  EXPECT_TRUE(bitwise_equal(pe, positional_embedding(BBox{16, 16, 16, 16}, 32, 16)));
}
