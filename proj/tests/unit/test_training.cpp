#include <gtest/gtest.h>

#include "mgtok/training.hpp"
#include "test_support.hpp"

using namespace mgtok;

namespace {

VlmModel tiny_model() {
  return VlmModel{Projector(ProjectorConfig{6, 12, 8, 1}), ToyDecoder(DecoderConfig{10, 8, 1, 2, 16, 32, 2})};
}

struct ToyData {
  std::vector<Mat> visual;
  std::vector<TrainExample> examples;
};

/// The answer (id 5 or 6) is the sign of the visual tokens' first feature,
/// so it is learnable only through the projector.
ToyData toy_data(std::uint64_t seed, std::size_t scenes) {
  Rng rng(seed);
  ToyData d;
  for (std::size_t s = 0; s < scenes; ++s) {
    Mat v(3, 6);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.normal();
    const bool positive = rng.bernoulli(0.5);
    v.col(0).setConstant(positive ? 1.5 : -1.5);
    d.visual.push_back(v);
    d.examples.push_back({s, {4, 7}, {positive ? 5 : 6, special::eos}});
    d.examples.push_back({s, {4, 8}, {positive ? 6 : 5, special::eos}});
  }
  return d;
}

TrainConfig stage2_cfg(double lr, int epochs) {
  TrainConfig c;
  c.stage = Stage::finetune;
  c.freeze_decoder = false;
  c.lr = lr;
  c.batch = 8;
  c.epochs = epochs;
  c.seed = 9;
  return c;
}

}  // namespace

TEST(TrainConfig, FreezeMisuseRejected) {
  TrainConfig c;
  c.stage = Stage::pretrain;
  c.freeze_decoder = false;
  EXPECT_THROW(c.validate(), Error);
  c.stage = Stage::finetune;
  c.freeze_decoder = true;
  EXPECT_THROW(c.validate(), Error);
  c.freeze_decoder = false;
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, PaperScaleDefaultsAccepted) {
  const TrainConfig p = TrainConfig::pretrain_defaults();
  EXPECT_EQ(p.lr, 1e-3);
  EXPECT_EQ(p.batch, 256u);
  EXPECT_NO_THROW(p.validate());
  const TrainConfig f = TrainConfig::finetune_defaults();
  EXPECT_EQ(f.lr, 2e-5);
  EXPECT_EQ(f.batch, 128u);
  EXPECT_NO_THROW(f.validate());
}

TEST(TrainConfig, StageMismatchRejected) {
  VlmModel m = tiny_model();
  const ToyData d = toy_data(1, 4);
  EXPECT_THROW(train_stage1(m, d.visual, d.examples, stage2_cfg(1e-3, 1)), Error);
  TrainConfig pre;
  pre.stage = Stage::pretrain;
  EXPECT_THROW(train_stage2(m, d.visual, d.examples, pre), Error);
}

TEST(Stage1, ZeroLearningRateChangesNothing) {
  VlmModel m = tiny_model();
  const std::uint32_t before = m.projector.params().checksum() ^ m.decoder.params().checksum();
  const ToyData d = toy_data(2, 16);
  TrainConfig c;
  c.lr = 0.0;
  c.epochs = 2;
  c.batch = 4;
  const TrainReport r = train_stage1(m, d.visual, d.examples, c);
  EXPECT_EQ(m.projector.params().checksum() ^ m.decoder.params().checksum(), before);
  EXPECT_EQ(r.projector_checksum_before, r.projector_checksum_after);
}

TEST(Stage1, OnlyProjectorChangesAndLossFalls) {
  VlmModel m = tiny_model();
  const ToyData d = toy_data(3, 64);
  TrainConfig c;
  c.lr = 3e-3;
  c.epochs = 6;
  c.batch = 16;
  const TrainReport r = train_stage1(m, d.visual, d.examples, c);
  EXPECT_EQ(r.decoder_checksum_before, r.decoder_checksum_after);
  EXPECT_EQ(r.decoder_checksum_after, m.decoder.params().checksum());
  EXPECT_NE(r.projector_checksum_before, r.projector_checksum_after);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(Stage2, BothComponentsChangeAndLossFalls) {
  VlmModel m = tiny_model();
  const ToyData d = toy_data(4, 64);
  const TrainReport r = train_stage2(m, d.visual, d.examples, stage2_cfg(3e-3, 8));
  EXPECT_NE(r.decoder_checksum_before, r.decoder_checksum_after);
  EXPECT_NE(r.projector_checksum_before, r.projector_checksum_after);
  EXPECT_LT(r.final_loss, r.initial_loss);
  EXPECT_LT(r.epoch_loss.back(), 0.5 * r.epoch_loss.front());
  EXPECT_EQ(r.epoch_loss.size(), 8u);
}

TEST(Stage2, Deterministic) {
  const ToyData d = toy_data(5, 20);
  VlmModel a = tiny_model(), b = tiny_model();
  train_stage2(a, d.visual, d.examples, stage2_cfg(1e-3, 2));
  train_stage2(b, d.visual, d.examples, stage2_cfg(1e-3, 2));
  EXPECT_EQ(a.decoder.params().checksum(), b.decoder.params().checksum());
  EXPECT_EQ(a.projector.params().checksum(), b.projector.params().checksum());
}

TEST(Stage2, WorkerCountDoesNotChangeResult) {
  const ToyData d = toy_data(6, 20);
  VlmModel a = tiny_model(), b = tiny_model();
  TrainConfig c = stage2_cfg(1e-3, 2);
  train_stage2(a, d.visual, d.examples, c);
  c.workers = 3;
  train_stage2(b, d.visual, d.examples, c);
  EXPECT_EQ(a.decoder.params().checksum(), b.decoder.params().checksum());
}

TEST(Stage2, DivergenceAborts) {
  VlmModel m = tiny_model();
  const ToyData d = toy_data(7, 64);
  TrainConfig c = stage2_cfg(50.0, 4);
  c.clip_norm = 0.0;
  c.divergence_factor = 2.0;
  try {
    train_stage2(m, d.visual, d.examples, c);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::divergence || e.code() == ErrorCode::non_finite);
  }
}

TEST(GroupLoss, EqualsSumOfExampleLosses) {
  const VlmModel m = tiny_model();
  const ToyData d = toy_data(8, 1);
  std::vector<const TrainExample*> group{&d.examples[0], &d.examples[1]};
  ParamStore pg = m.projector.params().zeros_like(), dg = m.decoder.params().zeros_like();
  const double shared = group_loss_and_grad(m, d.visual[0], group, &pg, &dg);
  ParamStore pe = m.projector.params().zeros_like(), de = m.decoder.params().zeros_like();
  double sum = 0.0;
  for (const TrainExample* e : group) sum += example_loss_and_grad(m, d.visual[0], *e, &pe, &de);
  EXPECT_NEAR(shared, sum, 1e-12);
  EXPECT_LT(relative_error(pg.flatten(), pe.flatten()), 1e-12);
  EXPECT_LT(relative_error(dg.flatten(), de.flatten()), 1e-12);
}
