#include <benchmark/benchmark.h>

#include "mgtok/config.hpp"
#include "mgtok/dataset.hpp"
#include "mgtok/experiment.hpp"
#include "mgtok/mask_inversion.hpp"
#include "mgtok/mask_ops.hpp"
#include "mgtok/token_pipeline.hpp"
#include "mgtok/vision_encoder.hpp"
#include "mgtok/vlm.hpp"

using namespace mgtok;

namespace {

const ExperimentConfig& config() {
  static const ExperimentConfig cfg = default_experiment_config();
  return cfg;
}

const Scene& scene() {
  static const Dataset d = gen_dataset(config().scene, 1, 1, 42);
  return d.scenes[0];
}

const ImageFeatureSet& features() {
  static const ImageFeatureSet f = VisionEncoder(config().encoder).encode(to_image(scene().pixels));
  return f;
}

MaskSet proposals(std::size_t n) {
  std::vector<BitGrid> objs;
  for (const SceneObject& o : scene().objects) objs.push_back(o.mask);
  Rng rng(7);
  return add_background(synth_proposals(objs, n, config().jitter, rng));
}

Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

static void BM_Encode(benchmark::State& state) {
  const VisionEncoder enc(config().encoder);
  const Image img = to_image(scene().pixels);
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(img));
}
BENCHMARK(BM_Encode)->Unit(benchmark::kMillisecond);

static void BM_AvgPool(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(avg_pool_2d(features().patches, k));
}
BENCHMARK(BM_AvgPool)->Arg(2)->Arg(4);

static void BM_Explain(benchmark::State& state) {
  const Vec q = features().cls;
  for (auto _ : state) benchmark::DoNotOptimize(explain(features(), q));
}
BENCHMARK(BM_Explain);

static void BM_InvertAll(benchmark::State& state) {
  const MaskSet set = proposals(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(invert_all(set, features(), config().inversion));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(set.member_count()));
}
BENCHMARK(BM_InvertAll)->Arg(8)->Arg(48)->Unit(benchmark::kMillisecond);

static void BM_DedupByIou(benchmark::State& state) {
  const MaskSet set = proposals(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(dedup_by_iou(set));
}
BENCHMARK(BM_DedupByIou)->Arg(48)->Arg(100);

static void BM_PrepareScene(benchmark::State& state) {
  const TokenFactory factory(config());
  for (auto _ : state) benchmark::DoNotOptimize(factory.prepare(scene(), false));
}
BENCHMARK(BM_PrepareScene)->Unit(benchmark::kMillisecond);

static void BM_DecoderForward(benchmark::State& state) {
  const ToyDecoder dec(config().decoder);
  const Mat visual = random_mat(state.range(0), config().decoder.model_dim, 1);
  const std::vector<int> text{special::bos, 4, 5, 6, 7, 8, special::sep, 9, special::eos};
  for (auto _ : state) benchmark::DoNotOptimize(dec.logits(visual, text));
}
BENCHMARK(BM_DecoderForward)->Arg(15)->Arg(86)->Arg(144);

static void BM_DecoderBackward(benchmark::State& state) {
  const ToyDecoder dec(config().decoder);
  const Mat visual = random_mat(state.range(0), config().decoder.model_dim, 2);
  const std::vector<int> text{special::bos, 4, 5, 6, 7, 8, special::sep, 9, special::eos};
  ParamStore grads = dec.params().zeros_like();
  Mat d_visual;
  for (auto _ : state) benchmark::DoNotOptimize(dec.loss(visual, text, 7, &grads, &d_visual));
}
BENCHMARK(BM_DecoderBackward)->Arg(15)->Arg(86)->Arg(144);

static void BM_SharedPrefixLoss(benchmark::State& state) {
  const ToyDecoder dec(config().decoder);
  const Mat visual = random_mat(86, config().decoder.model_dim, 3);
  const std::vector<std::vector<int>> texts(4, std::vector<int>{special::bos, 4, 5, 6, 7, 8, special::sep, 9, special::eos});
  const std::vector<std::size_t> firsts(4, 7);
  ParamStore grads = dec.params().zeros_like();
  for (auto _ : state) benchmark::DoNotOptimize(dec.loss_shared(visual, texts, firsts, &grads));
}
BENCHMARK(BM_SharedPrefixLoss);
BENCHMARK_MAIN();
