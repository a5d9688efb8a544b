#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "mask_oracles.hpp"
#include "mgtok/mask_ops.hpp"
#include "test_support.hpp"

using namespace mgtok;
using mgtok::testing::oracle_dedup;
using mgtok::testing::oracle_iou;
using mgtok::testing::random_maskset;
using mgtok::testing::random_rect_mask;

namespace {

BitGrid rect(int side, int x0, int y0, int x1, int y1) {
  BitGrid m(static_cast<std::size_t>(side), static_cast<std::size_t>(side), 0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
  return m;
}

MaskProposal proposal(BitGrid mask, double confidence) {
  MaskProposal p;
  p.bbox = tight_bbox(mask);
  p.mask = std::move(mask);
  p.confidence = confidence;
  return p;
}

void expect_coverage(const MaskSet& set) {
  ASSERT_TRUE(set.background.has_value());
  const auto side = static_cast<std::size_t>(set.image_side);
  BitGrid all(side, side, 0);
  for (const auto& p : set.proposals) all = pixelwise_or(all, p.mask);
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_TRUE(all[i] || set.background->mask[i]) << "pixel " << i << " uncovered";
    EXPECT_FALSE(all[i] && set.background->mask[i]) << "pixel " << i << " doubly covered";
  }
}

std::vector<BitGrid> three_objects() {
  return {rect(32, 2, 2, 10, 10), rect(32, 14, 3, 24, 13), rect(32, 5, 18, 17, 30)};
}

}  // namespace

TEST(Iou, IdenticalDisjointAndHandCounted) {
  const BitGrid a = rect(8, 0, 0, 4, 4);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, rect(8, 4, 4, 8, 8)), 0.0);
  BitGrid b(4, 4, 0), c(4, 4, 0);
  // b has 4 pixels, c has 4 pixels, 2 shared: 2 / 6.
  b[0] = b[1] = b[2] = b[3] = 1;
  c[2] = c[3] = c[4] = c[5] = 1;
  EXPECT_DOUBLE_EQ(iou(b, c), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(BitGrid(4, 4, 0), BitGrid(4, 4, 0)), 0.0);
}

TEST(Iou, DimensionMismatchRejected) {
  EXPECT_THROW(iou(BitGrid(4, 4, 0), BitGrid(5, 5, 0)), Error);
}

TEST(Iou, AgreesWithPixelCount) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const BitGrid a = random_rect_mask(rng, 16), b = random_rect_mask(rng, 16);
    EXPECT_DOUBLE_EQ(iou(a, b), oracle_iou(a, b));
  }
}

TEST(TightBBox, HalfOpenBox) {
  const BBox b = tight_bbox(rect(16, 3, 5, 9, 7));
  EXPECT_EQ(b, (BBox{3, 5, 9, 7}));
  EXPECT_EQ(tight_bbox(BitGrid(4, 4, 0)), (BBox{0, 0, 0, 0}));
}

TEST(SynthProposals, EveryProposalOverlapsItsObject) {
  Rng rng(2);
  const auto objs = three_objects();
  const MaskSet set = synth_proposals(objs, 12, JitterParams{}, rng);
  ASSERT_EQ(set.proposals.size(), 12u);
  EXPECT_FALSE(set.background.has_value());
  for (const auto& p : set.proposals) {
    ASSERT_GE(p.source_object, 0);
    EXPECT_GT(iou(p.mask, objs[static_cast<std::size_t>(p.source_object)]), 0.3);
    EXPECT_GE(p.confidence, 0.0);
    EXPECT_LE(p.confidence, 1.0);
    EXPECT_EQ(p.bbox, tight_bbox(p.mask));
  }
}

TEST(SynthProposals, NoJitterReproducesObjects) {
  Rng rng(3);
  const auto objs = three_objects();
  const MaskSet set = synth_proposals(objs, 3, JitterParams::none(), rng);
  ASSERT_EQ(set.proposals.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(set.proposals[i].mask, objs[i]);
    EXPECT_EQ(set.proposals[i].confidence, 1.0);
  }
}

TEST(SynthProposals, PaperScaleCountAccepted) {
  Rng rng(4);
  EXPECT_EQ(synth_proposals(three_objects(), 100, JitterParams{}, rng).proposals.size(), 100u);
}

TEST(SynthProposals, TooFewRejected) {
  Rng rng(5);
  EXPECT_THROW(synth_proposals(three_objects(), 2, JitterParams{}, rng), Error);
}

TEST(Background, EmptySetGivesFullMask) {
  MaskSet set;
  set.image_side = 8;
  const MaskSet out = add_background(set);
  ASSERT_TRUE(out.background.has_value());
  EXPECT_EQ(mask_area(out.background->mask), 64u);
}

TEST(Background, FullTilingGivesEmptyBackground) {
  const MaskSet out = add_background(tiled_masks(12, 3));
  ASSERT_TRUE(out.background.has_value());
  EXPECT_EQ(mask_area(out.background->mask), 0u);
  EXPECT_EQ(out.member_count(), 10u);
}

TEST(Background, CoverageOnRandomSets) {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) expect_coverage(add_background(random_maskset(rng, 16, rng.below(12))));
}

TEST(Dedup, LowOverlapSetOnlyReorders) {
  MaskSet set;
  set.image_side = 16;
  set.proposals = {proposal(rect(16, 0, 0, 4, 4), 0.2), proposal(rect(16, 8, 8, 12, 12), 0.9),
                   proposal(rect(16, 0, 8, 4, 12), 0.5)};
  const MaskSet out = dedup_by_iou(set);
  ASSERT_EQ(out.proposals.size(), 3u);
  EXPECT_EQ(out.proposals[0].confidence, 0.9);
  EXPECT_EQ(out.proposals[1].confidence, 0.5);
  EXPECT_EQ(out.proposals[2].confidence, 0.2);
}

TEST(Dedup, IdenticalCopiesKeepMostConfident) {
  MaskSet set;
  set.image_side = 16;
  for (double c : {0.3, 0.8, 0.5, 0.8}) set.proposals.push_back(proposal(rect(16, 2, 2, 9, 9), c));
  const auto kept = dedup_survivors(set);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0], 1u);  // first of the tied 0.8 copies
}

TEST(Dedup, BackgroundAlwaysKept) {
  Rng rng(7);
  const MaskSet out = dedup_by_iou(add_background(random_maskset(rng, 16, 20)));
  EXPECT_TRUE(out.background.has_value());
}

TEST(Dedup, MatchesBruteForceOracle) {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const MaskSet set = random_maskset(rng, 16, rng.below(51));
    const double t = rng.bernoulli(0.5) ? 0.5 : rng.uniform(0.1, 1.0);
    ASSERT_EQ(dedup_survivors(set, t), oracle_dedup(set, t)) << "case " << i;
  }
}

TEST(Dedup, SurvivorsPairwiseBelowThreshold) {
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const MaskSet out = dedup_by_iou(random_maskset(rng, 16, 30));
    for (std::size_t a = 0; a < out.proposals.size(); ++a)
      for (std::size_t b = a + 1; b < out.proposals.size(); ++b)
        EXPECT_LT(iou(out.proposals[a].mask, out.proposals[b].mask), 0.5);
  }
}

TEST(Dedup, ThenPruneIsIdempotent) {
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    const MaskSet once = prune_by_confidence(dedup_by_iou(add_background(random_maskset(rng, 16, 30))), 5);
    const MaskSet twice = prune_by_confidence(dedup_by_iou(once), 5);
    ASSERT_EQ(once.proposals.size(), twice.proposals.size());
    for (std::size_t k = 0; k < once.proposals.size(); ++k) {
      EXPECT_EQ(once.proposals[k].mask, twice.proposals[k].mask);
      EXPECT_EQ(once.proposals[k].confidence, twice.proposals[k].confidence);
    }
  }
}

TEST(Dedup, RankingPutsSurvivorsFirstThenTheRest) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const MaskSet set = random_maskset(rng, 16, rng.below(40));
    const auto kept = dedup_survivors(set);
    const auto ranking = dedup_ranking(set);
    ASSERT_EQ(ranking.size(), set.proposals.size());
    EXPECT_TRUE(std::equal(kept.begin(), kept.end(), ranking.begin()));
    auto sorted = ranking;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < sorted.size(); ++k) EXPECT_EQ(sorted[k], k);
    // The suppressed tail keeps descending confidence, index tie-break.
    for (std::size_t k = kept.size() + 1; k < ranking.size(); ++k) {
      const double prev = set.proposals[ranking[k - 1]].confidence;
      const double cur = set.proposals[ranking[k]].confidence;
      EXPECT_TRUE(prev > cur || (prev == cur && ranking[k - 1] < ranking[k]));
    }
  }
}

TEST(Prune, KeepCountsAndBackground) {
  Rng rng(11);
  const MaskSet set = add_background(random_maskset(rng, 16, 100));
  EXPECT_EQ(prune_by_confidence(set, 20).member_count(), 21u);
  EXPECT_EQ(prune_by_confidence(set, 5).member_count(), 6u);
  const MaskSet none = prune_by_confidence(set, 0);
  EXPECT_TRUE(none.proposals.empty());
  EXPECT_TRUE(none.background.has_value());
  EXPECT_EQ(prune_by_confidence(set, 500).proposals.size(), 100u);
}

TEST(Prune, KeepsHighestConfidenceWithIndexTieBreak) {
  MaskSet set;
  set.image_side = 8;
  for (double c : {0.5, 0.9, 0.5, 0.1, 0.9}) set.proposals.push_back(proposal(rect(8, 0, 0, 2, 2), c));
  set.proposals[2].source_object = 2;
  set.proposals[0].source_object = 0;
  const MaskSet out = prune_by_confidence(set, 3);
  ASSERT_EQ(out.proposals.size(), 3u);
  EXPECT_EQ(out.proposals[0].confidence, 0.9);
  EXPECT_EQ(out.proposals[1].confidence, 0.9);
  EXPECT_EQ(out.proposals[2].source_object, 0);
}

TEST(Tiles, CountsDisjointAndCovering) {
  for (int grid : {2, 3, 4, 5}) {
    const MaskSet set = tiled_masks(48, grid);
    ASSERT_EQ(set.proposals.size(), static_cast<std::size_t>(grid * grid));
    std::size_t area = 0;
    BitGrid all(48, 48, 0);
    for (std::size_t a = 0; a < set.proposals.size(); ++a) {
      area += mask_area(set.proposals[a].mask);
      all = pixelwise_or(all, set.proposals[a].mask);
      EXPECT_EQ(set.proposals[a].confidence, 1.0);
      for (std::size_t b = a + 1; b < set.proposals.size(); ++b)
        EXPECT_EQ(iou(set.proposals[a].mask, set.proposals[b].mask), 0.0);
    }
    EXPECT_EQ(area, 48u * 48u);
    EXPECT_EQ(mask_area(all), 48u * 48u);
  }
}

TEST(Tiles, RemainderAbsorbedByLastTile) {
  const MaskSet set = tiled_masks(10, 3);
  std::size_t area = 0;
  for (const auto& p : set.proposals) area += mask_area(p.mask);
  EXPECT_EQ(area, 100u);
  EXPECT_THROW(tiled_masks(10, 0), Error);
}

TEST(BBoxMasks, LShapeFillsItsBox) {
  BitGrid l(8, 8, 0);
  for (int y = 0; y < 4; ++y) l(static_cast<std::size_t>(y), 0) = 1;
  for (int x = 0; x < 4; ++x) l(3, static_cast<std::size_t>(x)) = 1;
  MaskSet set;
  set.image_side = 8;
  set.proposals = {proposal(l, 0.7)};
  const MaskSet out = bbox_masks(set);
  EXPECT_EQ(mask_area(out.proposals[0].mask), 16u);
  EXPECT_EQ(out.proposals[0].confidence, 0.7);
}

TEST(BBoxMasks, RectanglesUnchangedAndContainment) {
  Rng rng(12);
  MaskSet rects;
  rects.image_side = 16;
  for (int i = 0; i < 10; ++i) rects.proposals.push_back(proposal(random_rect_mask(rng, 16), 0.5));
  const MaskSet same = bbox_masks(rects);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(same.proposals[i].mask, rects.proposals[i].mask);

  for (int c = 0; c < 50; ++c) {
    const MaskSet set = random_maskset(rng, 16, 10);
    const MaskSet boxed = bbox_masks(set);
    ASSERT_EQ(boxed.proposals.size(), set.proposals.size());
    for (std::size_t i = 0; i < set.proposals.size(); ++i) {
      EXPECT_EQ(boxed.proposals[i].confidence, set.proposals[i].confidence);
      for (std::size_t k = 0; k < set.proposals[i].mask.size(); ++k)
        if (set.proposals[i].mask[k]) {
          EXPECT_TRUE(boxed.proposals[i].mask[k]);
        }
    }
  }
}

TEST(BBoxMasks, BoxStillOverlapsSourceObject) {
  // A box around a mask always intersects the object the mask came from, so
  // the mask-to-object IoU stays positive.
  Rng rng(13);
  const auto objs = three_objects();
  const MaskSet set = synth_proposals(objs, 30, JitterParams{}, rng);
  const MaskSet boxed = bbox_masks(set);
  for (std::size_t i = 0; i < set.proposals.size(); ++i)
    EXPECT_GT(iou(boxed.proposals[i].mask, objs[static_cast<std::size_t>(set.proposals[i].source_object)]), 0.0);
}
