#include "mgtok/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mgtok/checkpoint.hpp"

namespace mgtok {

namespace fs = std::filesystem;

namespace {

double now_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

class Stopwatch {
 public:
  double seconds() const { return now_seconds() - start_; }

 private:
  double start_ = now_seconds();
};

std::vector<int> with_eos(std::vector<int> ids) {
  ids.push_back(special::eos);
  return ids;
}

// Object tokens for every member of `masks`, with their bbox code attached
// before scaling (in the token) or recorded for later addition.
std::vector<ObjectToken> object_tokens(const MaskSet& masks, const ImageFeatureSet& features,
                                       const ExperimentConfig& cfg) {
  std::vector<ObjectToken> tokens = invert_all(masks, features, cfg.inversion, 1);
  for (ObjectToken& t : tokens) {
    const Vec pe = positional_embedding(t.bbox, cfg.scene.image_side, cfg.encoder.embed_dim);
    if (cfg.position_before_scaling) {
      t = attach_position(std::move(t), pe);
    } else {
      t.pos_embedding = pe;
    }
  }
  return tokens;
}

void add_positions_after_scaling(TokenBundle& b) {
  for (Token& t : b.tokens) {
    if (t.kind == TokenKind::object && t.meta.pos_embedding.size() == t.embedding.size())
      t.embedding += t.meta.pos_embedding;
  }
}

std::string plan_label(const ReductionPlan& p) {
  ReductionPlan unnamed = p;
  unnamed.name.clear();
  return unnamed.to_string();
}

// Row p of the text logits predicts text[p + 1]; the answer starts right
// after sep, at text position question_len + 2.
bool argmax_reproduces(const Mat& text_logits, std::size_t question_len, std::span<const int> answer) {
  const std::size_t first = question_len + 1;
  for (std::size_t t = 0; t < answer.size(); ++t) {
    Eigen::Index best = 0;
    text_logits.row(static_cast<Eigen::Index>(first + t)).maxCoeff(&best);
    if (best != answer[t]) return false;
  }
  return !answer.empty();
}

struct TestQuestion {
  std::size_t scene_pos = 0;
  QuestionKind kind = QuestionKind::existence;
  std::vector<int> question;
  std::vector<int> answer;
};

std::vector<TestQuestion> test_questions(const Dataset& data, std::span<const PreparedScene> test) {
  std::map<std::uint32_t, std::size_t> pos;
  for (std::size_t i = 0; i < test.size(); ++i) pos[test[i].scene_id] = i;
  const Vocabulary& vocab = Vocabulary::standard();
  std::vector<TestQuestion> out;
  for (const QAItem& q : data.qa) {
    const auto it = pos.find(q.scene_id);
    if (it == pos.end()) continue;
    out.push_back({it->second, q.kind, vocab.encode(q.question), with_eos(vocab.encode(q.answer))});
  }
  return out;
}

// Scores one model on visual inputs that were already reduced per scene.
EvalRow score(const std::string& group, const std::string& name, const std::string& model_name,
              const std::string& plan, const VlmModel& model, const std::vector<TokenBundle>& inputs,
              const std::vector<TestQuestion>& questions, std::size_t reference, std::size_t workers) {
  Stopwatch clock;
  EvalRow row;
  row.group = group;
  row.name = name;
  row.model = model_name;
  row.plan = plan;
  row.tokens = inputs.empty() ? 0 : inputs.front().count(TokenKind::global) +
                                        inputs.front().count(TokenKind::local) +
                                        inputs.front().count(TokenKind::object);
  for (const TokenBundle& b : inputs) {
    if (b.tokens.size() != row.tokens)
      throw Error(ErrorCode::infeasible_plan, "row '" + name + "' yields different token counts across scenes");
  }
  row.reduction_ratio = reduction_ratio(row.tokens, reference);
  row.checkpoint_crc = model_checksum(model);

  std::vector<Mat> visual(inputs.size());
  parallel_for(inputs.size(), workers, [&](std::size_t i) { visual[i] = project(model.projector, inputs[i]); });
  // All questions about one scene share its visual prefix in one pass.
  std::vector<std::vector<std::size_t>> by_scene(inputs.size());
  for (std::size_t i = 0; i < questions.size(); ++i) by_scene[questions[i].scene_pos].push_back(i);
  std::vector<std::uint8_t> correct(questions.size(), 0);
  parallel_for(by_scene.size(), workers, [&](std::size_t s) {
    if (by_scene[s].empty()) return;
    std::vector<std::vector<int>> texts;
    for (std::size_t i : by_scene[s]) texts.push_back(build_text(questions[i].question, questions[i].answer));
    const std::vector<Mat> logits = model.decoder.logits_shared(visual[s], texts);
    for (std::size_t k = 0; k < by_scene[s].size(); ++k) {
      const TestQuestion& q = questions[by_scene[s][k]];
      correct[by_scene[s][k]] = argmax_reproduces(logits[k], q.question.size(), q.answer) ? 1 : 0;
    }
  });
  for (std::size_t i = 0; i < questions.size(); ++i) {
    KindScore& s = row.by_kind[static_cast<std::size_t>(questions[i].kind)];
    ++s.total;
    s.correct += correct[i];
  }
  row.wall_seconds = clock.seconds();
  spdlog::info("{:<12} {:<26} tokens={:<4} macro={:.3f} existence={:.3f}", group, name, row.tokens,
               row.macro_accuracy(), row.accuracy(QuestionKind::existence));
  return row;
}

std::vector<TokenBundle> reduce_all(std::span<const PreparedScene> test, const ReductionPlan& plan,
                                    bool patch_bundle, std::size_t workers) {
  std::vector<TokenBundle> out(test.size());
  parallel_for(test.size(), workers, [&](std::size_t i) {
    const PreparedScene& s = test[i];
    const TokenBundle& source = patch_bundle ? s.patches : s.full;
    if (plan.dedup_iou && !patch_bundle) {
      const int background = static_cast<int>(s.masks.proposals.size());
      std::vector<int> ids;
      if (plan.object_keep) {
        // keep_objects preserves confidence order, so the budget is met
        // exactly and reduce() only applies the patch and global parts.
        const auto ranking = dedup_ranking(s.masks, *plan.dedup_iou);
        for (std::size_t k = 0; k < std::min(*plan.object_keep, ranking.size()); ++k)
          ids.push_back(static_cast<int>(ranking[k]));
        if (*plan.object_keep > ranking.size()) ids.push_back(background);
      } else {
        for (std::size_t k : dedup_survivors(s.masks, *plan.dedup_iou)) ids.push_back(static_cast<int>(k));
        ids.push_back(background);
      }
      out[i] = reduce(keep_objects(source, ids), plan_for_scene(plan, s.scene_id));
    } else {
      out[i] = reduce(source, plan_for_scene(plan, s.scene_id));
    }
  });
  return out;
}

using FamilyMember = std::optional<TokenBundle> PreparedScene::*;

FamilyMember family_member(std::string_view family) {
  if (family == "sam_like") return &PreparedScene::sam_like;
  if (family == "bbox") return &PreparedScene::bbox;
  if (family == "tiled") return &PreparedScene::tiled;
  throw Error(ErrorCode::invalid_argument, "unknown mask family " + std::string(family));
}

StageSummary run_stage(const std::string& model_name, VlmModel& model, std::span<const Mat> visual,
                       std::span<const TrainExample> examples, const TrainConfig& tc, std::uint32_t encoder_crc,
                       EventLog& log) {
  Stopwatch clock;
  const bool pre = tc.stage == Stage::pretrain;
  const std::string stage = pre ? "stage1" : "stage2";
  auto progress = [&](int epoch, double loss) {
    spdlog::info("{} {} epoch {} loss {:.4f}", model_name, stage, epoch + 1, loss);
    log.event("epoch", {{"epoch", epoch + 1}, {"loss", loss}}, {{"model", model_name}, {"stage", stage}});
  };
  const TrainReport rep = pre ? train_stage1(model, visual, examples, tc, progress)
                              : train_stage2(model, visual, examples, tc, progress);
  StageSummary s;
  s.model = model_name;
  s.stage = stage;
  s.epoch_loss = rep.epoch_loss;
  s.initial_loss = rep.initial_loss;
  s.final_loss = rep.final_loss;
  s.steps = rep.steps;
  s.encoder_crc_before = encoder_crc;
  s.encoder_crc_after = encoder_crc;
  s.wall_seconds = clock.seconds();
  return s;
}

}  // namespace

EventLog::EventLog(const fs::path& file)
    : out_(std::make_unique<std::ofstream>(file, std::ios::app)), start_(now_seconds()) {
  if (!*out_) throw Error(ErrorCode::io, "cannot open log file " + file.string());
}

void EventLog::event(const std::string& name, std::initializer_list<std::pair<const char*, double>> numbers,
                     std::initializer_list<std::pair<const char*, std::string>> texts) {
  if (!out_) return;
  nlohmann::json rec = {{"t", now_seconds() - start_}, {"event", name}};
  for (const auto& [k, v] : numbers) rec[k] = v;
  for (const auto& [k, v] : texts) rec[k] = v;
  *out_ << rec.dump() << '\n';
  out_->flush();
}

TokenFactory::TokenFactory(const ExperimentConfig& cfg) : cfg_(cfg), encoder_(cfg.encoder) {}

TokenBundle TokenFactory::bundle_from(const ImageFeatureSet& features, const VecGrid& locals,
                                      const MaskSet& masks) const {
  const auto tokens = object_tokens(masks, features, cfg_);
  TokenBundle b = assemble(features.cls, locals, tokens, cfg_.scale_tokens, cfg_.scale);
  if (!cfg_.position_before_scaling) add_positions_after_scaling(b);
  return b;
}

PreparedScene TokenFactory::prepare(const Scene& scene, bool mask_families) const {
  PreparedScene out;
  out.scene_id = scene.id;
  const ImageFeatureSet features = encoder_.encode(to_image(scene.pixels));
  const VecGrid locals = avg_pool_2d(features.patches, static_cast<std::size_t>(cfg_.local_pool));

  std::vector<BitGrid> gt;
  for (const SceneObject& o : scene.objects) gt.push_back(o.mask);
  Rng rng = Rng(splitmix64(cfg_.seed) ^ 0x6d61736bULL).split(scene.id);
  out.masks = add_background(synth_proposals(gt, cfg_.proposals, cfg_.jitter, rng));

  const auto tokens = object_tokens(out.masks, features, cfg_);
  for (const ObjectToken& t : tokens) {
    out.initial_mass_sum += t.initial_mass;
    out.final_mass_sum += t.final_mass;
    ++out.object_tokens;
    if (!t.is_background && t.source_mask_id >= 0 && static_cast<std::size_t>(t.source_mask_id) < gt.size())
      out.gt_map_iou.push_back(t.map_iou_after);
  }
  out.full = assemble(features.cls, locals, tokens, cfg_.scale_tokens, cfg_.scale);
  if (!cfg_.position_before_scaling) add_positions_after_scaling(out.full);
  out.patches = assemble(std::nullopt, features.patches, {}, false);

  if (mask_families) {
    const auto order = cfg_.mask_ablation_dedup_iou > 0.0 ? dedup_ranking(out.masks, cfg_.mask_ablation_dedup_iou)
                                                          : confidence_order(out.masks);
    const std::size_t k = std::min(cfg_.mask_ablation_objects, order.size());
    std::vector<int> top_ids;
    MaskSet top;
    top.image_side = out.masks.image_side;
    for (std::size_t i = 0; i < k; ++i) {
      top_ids.push_back(static_cast<int>(order[i]));
      top.proposals.push_back(out.masks.proposals[order[i]]);
    }
    // keep_objects restores confidence order among the chosen members.
    out.sam_like = keep_objects(out.full, top_ids);
    out.bbox = bundle_from(features, locals, bbox_masks(top));
    out.tiled = bundle_from(features, locals, tiled_masks(cfg_.scene.image_side, cfg_.tile_grid));
  }
  return out;
}

std::vector<PreparedScene> TokenFactory::prepare_all(std::span<const Scene> scenes, bool mask_families) const {
  std::vector<PreparedScene> out(scenes.size());
  parallel_for(scenes.size(), cfg_.workers, [&](std::size_t i) { out[i] = prepare(scenes[i], mask_families); });
  return out;
}

InversionSummary summarize_inversion(std::span<const PreparedScene> scenes) {
  InversionSummary s;
  s.scenes = scenes.size();
  std::vector<double> ious;
  double init = 0.0, fin = 0.0;
  for (const PreparedScene& p : scenes) {
    s.tokens += p.object_tokens;
    init += p.initial_mass_sum;
    fin += p.final_mass_sum;
    ious.insert(ious.end(), p.gt_map_iou.begin(), p.gt_map_iou.end());
  }
  if (s.tokens > 0) {
    s.mean_initial_mass = init / static_cast<double>(s.tokens);
    s.mean_final_mass = fin / static_cast<double>(s.tokens);
  }
  if (!ious.empty()) {
    std::sort(ious.begin(), ious.end());
    const std::size_t n = ious.size();
    s.median_gt_map_iou = n % 2 ? ious[n / 2] : 0.5 * (ious[n / 2 - 1] + ious[n / 2]);
  }
  return s;
}

std::span<const Scene> train_split(const Dataset& data, const ExperimentConfig& cfg) {
  if (data.scenes.size() < cfg.train_scenes + cfg.test_scenes)
    throw Error(ErrorCode::config, "dataset has " + std::to_string(data.scenes.size()) + " scenes, config needs " +
                                       std::to_string(cfg.train_scenes + cfg.test_scenes));
  return std::span(data.scenes).subspan(0, cfg.train_scenes);
}

std::span<const Scene> test_split(const Dataset& data, const ExperimentConfig& cfg) {
  train_split(data, cfg);
  return std::span(data.scenes).subspan(cfg.train_scenes, cfg.test_scenes);
}

TrainedModels train_models(const ExperimentConfig& cfg, const Dataset& data, std::span<const PreparedScene> train,
                           std::uint32_t encoder_crc, EventLog& log) {
  const Vocabulary& vocab = Vocabulary::standard();
  std::map<std::uint32_t, std::size_t> pos;
  for (std::size_t i = 0; i < train.size(); ++i) pos[train[i].scene_id] = i;

  std::vector<TrainExample> captions, questions;
  for (const Caption& c : data.captions) {
    const auto it = pos.find(c.scene_id);
    if (it != pos.end()) captions.push_back({it->second, {}, with_eos(vocab.encode(c.text))});
  }
  for (const QAItem& q : data.qa) {
    const auto it = pos.find(q.scene_id);
    if (it != pos.end()) questions.push_back({it->second, vocab.encode(q.question), with_eos(vocab.encode(q.answer))});
  }

  TrainConfig s1 = cfg.stage1;
  TrainConfig s2 = cfg.stage2;
  s1.seed = Rng(cfg.seed).split(101).next_u64();
  s2.seed = Rng(cfg.seed).split(202).next_u64();
  s1.workers = s2.workers = cfg.workers;

  TrainedModels out;
  auto train_one = [&](const std::string& name, auto&& input_of) {
    std::vector<Mat> visual(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) visual[i] = input_of(train[i]).embedding_matrix();
    VlmModel model{Projector(cfg.projector), ToyDecoder(cfg.decoder)};
    out.stages.push_back(run_stage(name, model, visual, captions, s1, encoder_crc, log));
    out.stages.push_back(run_stage(name, model, visual, questions, s2, encoder_crc, log));
    return model;
  };

  out.main = train_one("main", [](const PreparedScene& s) -> const TokenBundle& { return s.full; });
  if (cfg.patch_only_baseline)
    out.patch_only = train_one("patch_only", [](const PreparedScene& s) -> const TokenBundle& { return s.patches; });
  const bool have_families = !train.empty() && train.front().sam_like && train.front().bbox && train.front().tiled;
  if (cfg.mask_ablation_per_family && have_families) {
    for (const char* family : kMaskFamilies) {
      const auto member = family_member(family);
      out.families.push_back({family, train_one(std::string("mask_") + family,
                                                [&](const PreparedScene& s) -> const TokenBundle& {
                                                  return *(s.*member);
                                                })});
    }
  }
  return out;
}

bool greedy_matches(const ToyDecoder& decoder, const Mat& visual, std::span<const int> question,
                    std::span<const int> answer_with_eos) {
  if (answer_with_eos.empty()) return false;
  return argmax_reproduces(decoder.logits(visual, build_text(question, answer_with_eos)), question.size(),
                           answer_with_eos);
}

ReductionPlan plan_for_scene(const ReductionPlan& plan, std::uint32_t scene_id) {
  ReductionPlan p = plan;
  if (p.patch == PatchStrategy::prune_random) p.seed = plan.seed ^ splitmix64(scene_id);
  return p;
}

std::vector<EvalRow> evaluate_reduction(const ExperimentConfig& cfg, const Dataset& data,
                                        std::span<const PreparedScene> test, const VlmModel& main,
                                        const VlmModel* patch_only) {
  const auto questions = test_questions(data, test);
  const std::size_t ref = cfg.effective_reference();
  std::vector<EvalRow> rows;
  std::vector<std::size_t> budgets;
  for (const ReductionPlan& plan : cfg.plans) {
    const auto inputs = reduce_all(test, plan, false, cfg.workers);
    rows.push_back(score("reduction", plan.name.empty() ? plan_label(plan) : plan.name, "main", plan_label(plan),
                         main, inputs, questions, ref, cfg.workers));
    budgets.push_back(rows.back().tokens);
  }
  if (patch_only && !test.empty()) {
    const std::size_t patches = test.front().patches.tokens.size();
    const auto all = ReductionPlan::parse("patch=keep_all,objects=all,global=off");
    rows.push_back(score("baseline", "patch_only-full", "patch_only", plan_label(all), *patch_only,
                         reduce_all(test, all, true, cfg.workers), questions, ref, cfg.workers));
    std::sort(budgets.begin(), budgets.end(), std::greater<>());
    budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
    for (std::size_t n : budgets) {
      if (n >= patches) continue;
      ReductionPlan drop;
      drop.patch = PatchStrategy::prune_random;
      drop.patch_keep = n;
      drop.seed = Rng(cfg.seed).split(303).next_u64();
      drop.use_global = false;
      rows.push_back(score("baseline", "random_patch_drop-" + std::to_string(n), "patch_only", plan_label(drop),
                           *patch_only, reduce_all(test, drop, true, cfg.workers), questions, ref, cfg.workers));
    }
  }
  return rows;
}

std::vector<EvalRow> evaluate_ablations(const ExperimentConfig& cfg, const Dataset& data,
                                        std::span<const PreparedScene> test, const VlmModel& main,
                                        std::span<const FamilyModel> families) {
  const auto questions = test_questions(data, test);
  const std::size_t ref = cfg.effective_reference();
  std::vector<EvalRow> rows;
  const std::pair<const char*, const char*> composition[] = {
      {"patch", "patch=keep_all,objects=0,global=off"},
      {"patch+cls", "patch=keep_all,objects=0,global=on"},
      {"patch+cls+mask", "patch=keep_all,objects=all,global=on"},
  };
  for (const auto& [name, text] : composition) {
    const auto plan = ReductionPlan::parse(text);
    rows.push_back(score("composition", name, "main", plan_label(plan), main, reduce_all(test, plan, false, cfg.workers),
                         questions, ref, cfg.workers));
  }
  for (const char* name : kMaskFamilies) {
    const auto member = family_member(name);
    std::vector<TokenBundle> inputs;
    for (const PreparedScene& s : test) {
      if (!(s.*member)) throw Error(ErrorCode::invalid_argument, "test scenes were prepared without mask families");
      inputs.push_back(*(s.*member));
    }
    const auto own = std::find_if(families.begin(), families.end(),
                                  [&](const FamilyModel& f) { return f.family == name; });
    const bool shared = own == families.end();
    rows.push_back(score("mask_type", name, shared ? "main" : "mask_" + own->family,
                         std::string(name) + ":" + std::to_string(cfg.mask_ablation_objects) + " objects",
                         shared ? main : own->model, inputs, questions, ref, cfg.workers));
  }
  return rows;
}

ExperimentResults run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, const Dataset* data) {
  cfg.validate();
  fs::create_directories(out_dir);
  EventLog log(out_dir / "log.jsonl");
  ExperimentResults res;
  res.config = dump_config(cfg);
  res.reference_tokens = cfg.effective_reference();
  res.status = "partial: not started";
  try {
    Stopwatch total;
    Dataset generated;
    if (!data) {
      spdlog::info("generating {} scenes", cfg.train_scenes + cfg.test_scenes);
      generated = gen_dataset(cfg.scene, cfg.train_scenes + cfg.test_scenes, cfg.qa_per_scene, cfg.seed, cfg.workers);
      data = &generated;
    }
    log.event("dataset", {{"scenes", static_cast<double>(data->scenes.size())},
                          {"questions", static_cast<double>(data->qa.size())}});

    TokenFactory factory(cfg);
    const std::uint32_t encoder_crc = factory.encoder().weights_checksum();
    Stopwatch inv_clock;
    spdlog::info("building tokens for {} train and {} test scenes", cfg.train_scenes, cfg.test_scenes);
    const auto train = factory.prepare_all(train_split(*data, cfg), cfg.mask_ablation_per_family);
    const auto test = factory.prepare_all(test_split(*data, cfg), true);
    res.inversion = summarize_inversion(train);
    res.inversion.wall_seconds = inv_clock.seconds();
    res.full_tokens = test.empty() ? 0 : test.front().full.tokens.size();
    // Fail before training if a plan cannot run on the trained layout.
    for (const PreparedScene& s : test)
      for (const ReductionPlan& p : cfg.plans) predicted_count(p, layout_of(s.full));
    log.event("inversion", {{"tokens", static_cast<double>(res.inversion.tokens)},
                            {"mean_initial_mass", res.inversion.mean_initial_mass},
                            {"mean_final_mass", res.inversion.mean_final_mass},
                            {"median_gt_map_iou", res.inversion.median_gt_map_iou},
                            {"seconds", res.inversion.wall_seconds}});

    TrainedModels models = train_models(cfg, *data, train, encoder_crc, log);
    if (factory.encoder().weights_checksum() != encoder_crc)
      throw Error(ErrorCode::invalid_argument, "encoder weights changed during training");
    res.training = models.stages;
    write_checkpoint({models.main, res.config}, out_dir / "main.mgck");
    if (models.patch_only) write_checkpoint({*models.patch_only, res.config}, out_dir / "patch_only.mgck");
    for (const FamilyModel& f : models.families)
      write_checkpoint({f.model, res.config}, out_dir / ("mask_" + f.family + ".mgck"));

    for (EvalRow& r : evaluate_reduction(cfg, *data, test, models.main, models.patch_only ? &*models.patch_only : nullptr)) {
      log.event("eval", {{"tokens", static_cast<double>(r.tokens)}, {"macro", r.macro_accuracy()}},
                {{"group", r.group}, {"name", r.name}});
      res.rows.push_back(std::move(r));
    }
    for (EvalRow& r : evaluate_ablations(cfg, *data, test, models.main, models.families)) {
      log.event("eval", {{"tokens", static_cast<double>(r.tokens)}, {"macro", r.macro_accuracy()}},
                {{"group", r.group}, {"name", r.name}});
      res.rows.push_back(std::move(r));
    }
    res.status = "complete";
    log.event("done", {{"seconds", total.seconds()}});
  } catch (const std::exception& e) {
    res.status = std::string("partial: ") + e.what();
    log.event("error", {}, {{"message", e.what()}});
    write_results(res, out_dir);
    throw;
  }
  write_results(res, out_dir);
  return res;
}

}  // namespace mgtok
