// Acceptance suite: runs the ten primary criteria and prints one PASS/FAIL
// line per criterion. Exit status is nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fuzz.hpp"
#include "mask_oracles.hpp"
#include "mgtok/binary_io.hpp"
#include "mgtok/bundle_io.hpp"
#include "mgtok/checkpoint.hpp"
#include "mgtok/config.hpp"
#include "mgtok/dataset.hpp"
#include "mgtok/experiment.hpp"
#include "mgtok/mask_io.hpp"
#include "mgtok/report.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace mgtok;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;  // 0: no separate budget
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string points(double acc) { return fmt("%.1f", 100.0 * acc); }

/// Real scenes and encoder features at experiment scale.
struct SceneFeatures {
  Scene scene;
  ImageFeatureSet features;
  MaskSet proposals;  // with background
};

std::vector<SceneFeatures> sample_scenes(const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed) {
  const Dataset d = gen_dataset(cfg.scene, n, 1, seed);
  const VisionEncoder enc(cfg.encoder);
  std::vector<SceneFeatures> out;
  for (const Scene& s : d.scenes) {
    std::vector<BitGrid> objs;
    for (const SceneObject& o : s.objects) objs.push_back(o.mask);
    Rng rng = Rng(seed).split(s.id);
    out.push_back({s, enc.encode(to_image(s.pixels)), add_background(synth_proposals(objs, 8, cfg.jitter, rng))});
  }
  return out;
}

// 1. Gradient oracles ------------------------------------------------------

Outcome gradient_oracles(const ExperimentConfig& cfg) {
  constexpr int kCases = 20;
  constexpr double kTol = 1e-4;
  const auto scenes = sample_scenes(cfg, kCases, 101);
  Rng rng(1);
  std::array<double, 4> worst{};
  std::array<int, 4> passed{};

  for (int c = 0; c < kCases; ++c) {
    const ImageFeatureSet& f = scenes[static_cast<std::size_t>(c)].features;
    const int dim = cfg.encoder.embed_dim;
    const int cells = cfg.encoder.patch_count();

    // (a) explainability map: d(u . weights)/dq.
    ScalarGrid up(f.patches.rows(), f.patches.cols());
    for (double& u : up) u = rng.normal();
    const Vec q = mgtok::testing::random_vec(rng, dim, 0.5);
    const auto map_loss = [&](const Vec& x) {
      const ExplainabilityMap m = explain(f, x);
      double s = 0.0;
      for (int j = 0; j < cells; ++j) s += up[static_cast<std::size_t>(j)] * m.weights[static_cast<std::size_t>(j)];
      return s;
    };
    const double ea = relative_error(explain_backward(f, q, up), finite_diff_grad(map_loss, q));

    // (b) inversion objective on a real mask of this scene.
    const MaskSet& ms = scenes[static_cast<std::size_t>(c)].proposals;
    const BitGrid& mask = ms.proposals[rng.below(ms.proposals.size())].mask;
    const InversionLoss kind = c % 2 == 0 ? InversionLoss::cross_entropy : InversionLoss::mse;
    const InversionObjective obj(f, mask_target(mask, cfg.encoder.grid_side()), f.cls, kind, cfg.inversion.reg_weight);
    const Vec q2 = f.cls + mgtok::testing::random_vec(rng, dim, 0.3);
    const double eb =
        relative_error(obj.gradient(q2), finite_diff_grad([&](const Vec& x) { return obj.value(x); }, q2));

    // (c) projector weights at the experiment's dimensions.
    Projector proj(ProjectorConfig{cfg.projector.in_dim, cfg.projector.hidden_dim, cfg.projector.out_dim,
                                   static_cast<std::uint64_t>(c)});
    Mat x(5, cfg.projector.in_dim), upm(5, cfg.projector.out_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < upm.size(); ++i) upm.data()[i] = rng.normal();
    Projector::Cache cache;
    proj.forward(x, &cache);
    ParamStore pg = proj.params().zeros_like();
    proj.backward(upm, cache, &pg);
    const auto proj_loss = [&](const Vec& w) {
      Projector p2 = proj;
      p2.params().assign(w);
      return (p2.forward(x).array() * upm.array()).sum();
    };
    const double ec = relative_error(pg.flatten(), finite_diff_grad(proj_loss, proj.params().flatten()));

    // (d) decoder loss on a miniature two-layer decoder.
    const ToyDecoder dec(DecoderConfig{static_cast<int>(Vocabulary::standard().size()), 16, 2, 2, 32, 48,
                                       static_cast<std::uint64_t>(c)});
    Mat visual(4, 16);
    for (Eigen::Index i = 0; i < visual.size(); ++i) visual.data()[i] = rng.normal();
    std::vector<int> text{special::bos};
    for (int i = 0; i < 6; ++i) text.push_back(rng.between(special::count, 31));
    text.push_back(special::eos);
    const std::size_t first = 3;
    ParamStore dg = dec.params().zeros_like();
    dec.loss(visual, text, first, &dg);
    const auto dec_loss = [&](const Vec& w) {
      ToyDecoder d2 = dec;
      d2.params().assign(w);
      return d2.loss(visual, text, first);
    };
    const double ed = relative_error(dg.flatten(), finite_diff_grad(dec_loss, dec.params().flatten()));

    const std::array<double, 4> e{ea, eb, ec, ed};
    for (std::size_t k = 0; k < 4; ++k) {
      worst[k] = std::max(worst[k], e[k]);
      passed[k] += e[k] < kTol ? 1 : 0;
    }
  }
  const bool ok = std::all_of(passed.begin(), passed.end(), [](int p) { return p == kCases; });
  return {ok, "max rel err map " + fmt("%.1e", worst[0]) + ", inversion " + fmt("%.1e", worst[1]) + ", projector " +
                  fmt("%.1e", worst[2]) + ", decoder " + fmt("%.1e", worst[3]) + " over " + std::to_string(kCases) +
                  " cases each"};
}

// 2. Decomposition exactness ----------------------------------------------

Outcome decomposition(const ExperimentConfig& cfg) {
  const auto scenes = sample_scenes(cfg, 6, 202);
  double worst = 0.0;
  bool workers_equal = true;
  for (const SceneFeatures& s : scenes) {
    MaskSet eight = s.proposals;
    eight.proposals.resize(7);  // 7 proposals + background = 8 members
    const auto joint1 = invert_all(eight, s.features, cfg.inversion, 1);
    const auto joint4 = invert_all(eight, s.features, cfg.inversion, 4);
    for (std::size_t i = 0; i < 8; ++i) {
      const BitGrid& m = i < 7 ? eight.proposals[i].mask : eight.background->mask;
      const ObjectToken solo = invert_mask(m, s.features, cfg.inversion);
      worst = std::max(worst, (joint1[i].embedding - solo.embedding).cwiseAbs().maxCoeff());
      workers_equal = workers_equal && bitwise_equal(joint1[i].embedding, joint4[i].embedding);
    }
  }
  return {worst <= 1e-12 && workers_equal, "max |joint - independent| = " + fmt("%.1e", worst) +
                                               " on 6 sets of 8 masks; workers 1 vs 4 " +
                                               (workers_equal ? "bit-identical" : "DIFFER")};
}

// 3. Mask algebra -----------------------------------------------------------

Outcome mask_algebra() {
  Rng rng(303);
  int dedup_ok = 0, coverage_ok = 0;
  constexpr int kDedup = 200, kCoverage = 200;
  for (int i = 0; i < kDedup; ++i) {
    const MaskSet set = mgtok::testing::random_maskset(rng, 24, 1 + rng.below(50));
    dedup_ok += dedup_survivors(set, 0.5) == mgtok::testing::oracle_dedup(set, 0.5) ? 1 : 0;
  }
  for (int i = 0; i < kCoverage; ++i) {
    const MaskSet set = add_background(mgtok::testing::random_maskset(rng, 24, rng.below(20)));
    BitGrid all(24, 24, 0);
    for (const auto& p : set.proposals) all = pixelwise_or(all, p.mask);
    bool ok = set.background.has_value();
    for (std::size_t k = 0; ok && k < all.size(); ++k) {
      const bool bg = set.background->mask[k] != 0, fg = all[k] != 0;
      ok = (bg || fg) && !(bg && fg);
    }
    coverage_ok += ok ? 1 : 0;
  }
  return {dedup_ok == kDedup && coverage_ok == kCoverage,
          "dedup matches oracle " + std::to_string(dedup_ok) + "/" + std::to_string(kDedup) + ", coverage " +
              std::to_string(coverage_ok) + "/" + std::to_string(kCoverage)};
}

// 4. Token arithmetic -------------------------------------------------------

Outcome token_arithmetic() {
  Rng rng(404);
  const int dim = 8;
  std::vector<ObjectToken> objs(101);
  for (std::size_t i = 0; i < objs.size(); ++i) {
    objs[i].embedding = mgtok::testing::random_vec(rng, dim);
    objs[i].confidence = rng.uniform();
    objs[i].source_mask_id = static_cast<int>(i);
  }
  objs.back().is_background = true;
  const TokenBundle full = assemble(mgtok::testing::random_vec(rng, dim), mgtok::testing::random_grid(rng, 6, 6, dim),
                                    objs, true);
  const std::pair<const char*, std::size_t> cases[] = {
      {"patch=keep_all,objects=all", 138},
      {"patch=keep_all,objects=20", 57},
      {"patch=keep_all,objects=5", 42},
      {"patch=prune_random:23:1,objects=5", 29},
      {"patch=pool:2,objects=5", 15},
  };
  std::ostringstream detail;
  bool ok = full.tokens.size() == 138;
  for (const auto& [plan, expected] : cases) {
    const TokenBundle r = reduce(full, ReductionPlan::parse(plan));
    const std::size_t want = r.count(TokenKind::local) + r.count(TokenKind::global) + r.count(TokenKind::object);
    ok = ok && r.tokens.size() == expected && want == expected;
    detail << r.count(TokenKind::local) << "+" << r.count(TokenKind::global) << "+" << r.count(TokenKind::object)
           << "=" << r.tokens.size() << " ";
  }
  const std::string r144 = format_percent(reduction_ratio(144, 576));
  const std::string r57 = format_percent(reduction_ratio(57, 576));
  const std::string r15 = format_percent(reduction_ratio(15, 576));
  ok = ok && r144 == "75%" && r57 == "90%" && r15 == "97%";
  detail << "| ratios vs 576: 144->" << r144 << " 57->" << r57 << " 15->" << r15;
  return {ok, detail.str()};
}

// 5. Scaling contract -------------------------------------------------------

Outcome scaling_contract(const ExperimentConfig& cfg) {
  const auto scenes = sample_scenes(cfg, 10, 505);
  double worst_norm = 0.0, worst_cos = 0.0, worst_mean = 0.0, worst_std = 0.0;
  for (const SceneFeatures& s : scenes) {
    const VecGrid locals = avg_pool_2d(s.features.patches, static_cast<std::size_t>(cfg.local_pool));
    const auto tokens = invert_all(s.proposals, s.features, cfg.inversion);
    std::vector<Vec> raw{s.features.cls};
    for (const ObjectToken& t : tokens) raw.push_back(t.embedding);

    const TokenBundle nr = assemble(s.features.cls, locals, tokens, true);
    ScaleOptions lit;
    lit.mode = ScaleMode::literal_affine;
    const TokenBundle la = assemble(s.features.cls, locals, tokens, true, lit);
    const PatchStats entry = compute_entry_stats(locals.values());

    // Map bundle order back to the inputs: global first, then objects by source index.
    for (const TokenBundle* b : {&nr, &la}) {
      for (const Token& t : b->tokens) {
        if (t.kind == TokenKind::local) continue;
        const Vec& before = t.kind == TokenKind::global ? raw[0] : raw[1 + static_cast<std::size_t>(t.meta.source_index)];
        if (b == &nr) {
          worst_norm = std::max(worst_norm, std::abs(t.embedding.norm() - nr.patch_stats.mu));
          worst_cos = std::max(worst_cos, std::abs(t.embedding.dot(before) / (t.embedding.norm() * before.norm()) - 1.0));
        } else {
          const double mean = t.embedding.mean();
          const double sd = std::sqrt((t.embedding.array() - mean).square().mean());
          worst_mean = std::max(worst_mean, std::abs(mean - entry.mu));
          worst_std = std::max(worst_std, std::abs(sd - entry.sigma));
        }
      }
    }
  }
  const bool ok = worst_norm <= 1e-9 && worst_cos <= 1e-12 && worst_mean <= 1e-6 && worst_std <= 1e-6;
  return {ok, "norm_retarget: max |norm - mu| " + fmt("%.1e", worst_norm) + ", max |cos - 1| " + fmt("%.1e", worst_cos) +
                  "; literal_affine: max |mean - mu| " + fmt("%.1e", worst_mean) + ", max |std - sigma| " +
                  fmt("%.1e", worst_std)};
}

// 6. Inversion efficacy -----------------------------------------------------

Outcome inversion_efficacy(const ExperimentConfig& cfg) {
  constexpr double kMedianIouFloor = 0.5;  // regression bound, measured once and frozen
  const Dataset d = gen_dataset(cfg.scene, 100, 1, 606);
  const VisionEncoder enc(cfg.encoder);
  double before = 0.0, after = 0.0;
  std::vector<double> ious;
  std::vector<std::vector<ObjectToken>> per_scene(d.scenes.size());
  parallel_for(d.scenes.size(), cfg.workers, [&](std::size_t i) {
    const ImageFeatureSet f = enc.encode(to_image(d.scenes[i].pixels));
    per_scene[i] = invert_all(object_maskset(d.scenes[i], cfg.scene.image_side), f, cfg.inversion);
  });
  for (const auto& tokens : per_scene) {
    for (const ObjectToken& t : tokens) {
      before += t.initial_mass;
      after += t.final_mass;
      ious.push_back(t.map_iou_after);
    }
  }
  const double n = static_cast<double>(ious.size());
  std::nth_element(ious.begin(), ious.begin() + static_cast<long>(ious.size() / 2), ious.end());
  double median = ious[ious.size() / 2];
  if (ious.size() % 2 == 0) {
    const double lower = *std::max_element(ious.begin(), ious.begin() + static_cast<long>(ious.size() / 2));
    median = 0.5 * (median + lower);
  }
  const bool ok = after / n > before / n && median >= kMedianIouFloor;
  return {ok, "mean mass inside mask " + fmt("%.3f", before / n) + " -> " + fmt("%.3f", after / n) +
                  ", median ground-truth map IoU " + fmt("%.3f", median) + " (floor " + fmt("%.2f", kMedianIouFloor) +
                  ") over " + std::to_string(ious.size()) + " masks"};
}

// 7-9. Experiment trends ----------------------------------------------------

struct ExperimentRun {
  bool done = false;
  ExperimentResults results;
  double seconds = 0.0;
  std::string error;
};

ExperimentRun& experiment(const ExperimentConfig& cfg, const fs::path& out) {
  static ExperimentRun run;
  if (!run.done) {
    run.done = true;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      run.results = run_experiment(cfg, out);
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return run;
}

const EvalRow* need(const ExperimentResults& r, const std::string& group, const std::string& name) {
  const EvalRow* row = r.find(group, name);
  if (!row) throw std::runtime_error("results lack row " + group + "/" + name);
  return row;
}

Outcome graceful_degradation(const ExperimentConfig& cfg, const fs::path& out) {
  const ExperimentRun& run = experiment(cfg, out);
  if (!run.error.empty()) return {false, "experiment failed: " + run.error};
  const double full = need(run.results, "reduction", "full")->accuracy(QuestionKind::existence);
  const EvalRow* r42 = need(run.results, "reduction", "42-analog");
  const double a42 = r42->accuracy(QuestionKind::existence);
  const double drop =
      need(run.results, "baseline", "random_patch_drop-" + std::to_string(r42->tokens))->accuracy(QuestionKind::existence);
  const double loss_pts = 100.0 * (full - a42);
  const double margin_pts = 100.0 * (a42 - drop);
  const bool ok = loss_pts <= 5.0 && margin_pts >= 3.0 && run.seconds < 1800.0;
  return {ok, "existence accuracy full " + points(full) + ", 42-analog " + points(a42) + " (drop " +
                  fmt("%.1f", loss_pts) + " pts, limit 5), random patch drop at " + std::to_string(r42->tokens) +
                  " tokens " + points(drop) + " (margin " + fmt("%.1f", margin_pts) + " pts, need 3); experiment " +
                  fmt("%.0f", run.seconds) + " s (limit 1800)"};
}

Outcome composition_trend(const ExperimentConfig& cfg, const fs::path& out) {
  const ExperimentRun& run = experiment(cfg, out);
  if (!run.error.empty()) return {false, "experiment failed: " + run.error};
  const EvalRow* p = need(run.results, "composition", "patch");
  const EvalRow* pc = need(run.results, "composition", "patch+cls");
  const EvalRow* pcm = need(run.results, "composition", "patch+cls+mask");
  bool strictly_best = false;
  std::string best_kinds;
  for (QuestionKind k : kAllQuestionKinds) {
    if (pcm->by_kind[static_cast<std::size_t>(k)].total == 0) continue;
    if (pcm->accuracy(k) > pc->accuracy(k) && pcm->accuracy(k) > p->accuracy(k)) {
      strictly_best = true;
      best_kinds += std::string(best_kinds.empty() ? "" : ",") + std::string(to_string(k));
    }
  }
  const bool ok = pcm->macro_accuracy() >= pc->macro_accuracy() && pc->macro_accuracy() >= p->macro_accuracy() &&
                  strictly_best;
  return {ok, "macro accuracy patch " + points(p->macro_accuracy()) + ", patch+cls " + points(pc->macro_accuracy()) +
                  ", patch+cls+mask " + points(pcm->macro_accuracy()) + "; triplet strictly best on " +
                  (best_kinds.empty() ? "no kind" : best_kinds)};
}

Outcome mask_type_robustness(const ExperimentConfig& cfg, const fs::path& out) {
  const ExperimentRun& run = experiment(cfg, out);
  if (!run.error.empty()) return {false, "experiment failed: " + run.error};
  std::vector<double> acc;
  std::string detail;
  std::set<std::size_t> budgets;
  for (const char* name : {"sam_like", "bbox", "tiled"}) {
    const EvalRow* row = need(run.results, "mask_type", name);
    acc.push_back(row->macro_accuracy());
    budgets.insert(row->tokens);
    detail += std::string(detail.empty() ? "" : ", ") + name + " " + points(row->macro_accuracy());
  }
  const double spread = 100.0 * (*std::max_element(acc.begin(), acc.end()) - *std::min_element(acc.begin(), acc.end()));
  const bool ok = spread <= 5.0 && budgets.size() == 1;
  return {ok, "macro accuracy " + detail + " at " + std::to_string(*budgets.begin()) + " tokens; spread " +
                  fmt("%.1f", spread) + " pts (limit 5)"};
}

// 10. Serialization ---------------------------------------------------------

Outcome serialization(const ExperimentConfig& cfg, const fs::path& out) {
  const fs::path dir = out / "serialization";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(1010);
  std::size_t roundtrips = 0, roundtrip_ok = 0;
  std::size_t cases = 0, structured = 0;
  std::string first_failure;
  const auto tally = [&](const mgtok::testing::FuzzTally& t) {
    cases += t.cases;
    structured += t.structured;
    if (first_failure.empty() && !t.failures.empty()) first_failure = t.failures.front();
  };

  // Bundles and mask sets from real prepared scenes.
  ExperimentConfig small = cfg;
  small.inversion.steps = 10;
  const Dataset data = gen_dataset(cfg.scene, 4, cfg.qa_per_scene, 1011);
  const TokenFactory factory(small);
  const auto prepared = factory.prepare_all(data.scenes, true);
  for (const PreparedScene& p : prepared) {
    for (const TokenBundle* b : {&p.full, &p.patches, &*p.tiled}) {
      const auto bytes = encode_bundle(*b);
      write_bundle(*b, dir / "b.mgtb");
      ++roundtrips;
      roundtrip_ok += decode_bundle(bytes) == *b && read_file_bytes(dir / "b.mgtb") == bytes &&
                              encode_bundle(read_bundle(dir / "b.mgtb")) == bytes
                          ? 1
                          : 0;
    }
    const auto mbytes = encode_maskset(p.masks);
    write_maskset(p.masks, dir / "m.mgms");
    ++roundtrips;
    roundtrip_ok += read_maskset(dir / "m.mgms") == p.masks && encode_maskset(decode_maskset(mbytes)) == mbytes ? 1 : 0;
  }
  tally(mgtok::testing::fuzz_decoder(encode_bundle(prepared[0].full), [](auto b) { decode_bundle(b); }, 300, rng));
  tally(mgtok::testing::fuzz_decoder(encode_maskset(prepared[1].masks), [](auto b) { decode_maskset(b); }, 300, rng));

  // Checkpoint at experiment dimensions.
  const Checkpoint ck{VlmModel{Projector(cfg.projector), ToyDecoder(cfg.decoder)}, dump_config(cfg)};
  const auto cbytes = encode_checkpoint(ck);
  write_checkpoint(ck, dir / "c.mgck");
  ++roundtrips;
  const Checkpoint back = read_checkpoint(dir / "c.mgck");
  roundtrip_ok += encode_checkpoint(back) == cbytes && model_checksum(back.model) == model_checksum(ck.model) ? 1 : 0;
  tally(mgtok::testing::fuzz_decoder(cbytes, [](auto b) { decode_checkpoint(b); }, 300, rng));

  // Dataset directory: round trip, then damage one file at a time.
  write_dataset(data, dir / "data");
  ++roundtrips;
  roundtrip_ok += read_dataset(dir / "data") == data ? 1 : 0;
  const char* files[] = {"manifest.json", "qa.jsonl",          "captions.jsonl",
                         "objects.jsonl", "scenes/000002.ppm", "masks/000001.mgms"};
  std::size_t dataset_cases = 0;
  for (int k = 0; k < 120; ++k) {
    const char* rel = files[k % 6];
    const fs::path work = dir / "damaged";
    fs::remove_all(work);
    fs::copy(dir / "data", work, fs::copy_options::recursive);
    const auto good = read_file_bytes(work / rel);
    write_file_bytes(work / rel, mgtok::testing::mutate(good, static_cast<mgtok::testing::Mutation>((k / 6) % 6), rng));
    ++cases;
    ++dataset_cases;
    try {
      read_dataset(work);
      if (first_failure.empty()) first_failure = std::string("damaged ") + rel + " was accepted";
    } catch (const Error&) {
      ++structured;
    } catch (const std::exception& e) {
      if (first_failure.empty()) first_failure = std::string("damaged ") + rel + ": foreign exception " + e.what();
    }
  }

  const bool ok = roundtrip_ok == roundtrips && structured == cases && cases >= 1000;
  std::string detail = "round trips " + std::to_string(roundtrip_ok) + "/" + std::to_string(roundtrips) +
                       " bit-exact; structured errors on " + std::to_string(structured) + "/" + std::to_string(cases) +
                       " damaged inputs (bundle 300, mask 300, checkpoint 300, dataset " +
                       std::to_string(dataset_cases) + ")";
  if (!first_failure.empty()) detail += "; first failure: " + first_failure;
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the multi-granularity token library"};
  std::string out = "acceptance_run";
  std::string config_path;
  std::vector<int> only;
  std::size_t workers = 1;
  app.add_option("--out", out, "scratch and experiment output directory");
  app.add_option("-c,--config", config_path, "experiment config (default: built-in defaults)");
  app.add_option("--only", only, "run only these criterion numbers");
  app.add_option("-j,--workers", workers, "worker threads");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::string> overrides{"seed=20261017", "workers=" + std::to_string(workers)};
  const ExperimentConfig cfg = config_path.empty() ? parse_config(R"({"schema_version": 1})", overrides)
                                                   : load_config(config_path, overrides);
  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  const std::vector<Criterion> criteria = {
      {1, "gradient oracles", 120, [&] { return gradient_oracles(cfg); }},
      {2, "decomposition exactness", 60, [&] { return decomposition(cfg); }},
      {3, "mask algebra oracles", 60, [] { return mask_algebra(); }},
      {4, "token arithmetic fixtures", 0, [] { return token_arithmetic(); }},
      {5, "scaling contract", 0, [&] { return scaling_contract(cfg); }},
      {6, "inversion efficacy", 0, [&] { return inversion_efficacy(cfg); }},
      {7, "graceful degradation", 0, [&] { return graceful_degradation(cfg, out_dir / "experiment"); }},
      {8, "token composition trend", 0, [&] { return composition_trend(cfg, out_dir / "experiment"); }},
      {9, "mask type robustness", 0, [&] { return mask_type_robustness(cfg, out_dir / "experiment"); }},
      {10, "serialization", 120, [&] { return serialization(cfg, out_dir); }},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over time budget of " + fmt("%.0f", c.budget_seconds) + " s";
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << ": " << c.name << " | " << o.detail
              << " [" << fmt("%.1f", secs) << " s]" << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
