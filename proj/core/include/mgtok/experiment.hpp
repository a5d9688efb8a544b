#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgtok/config.hpp"
#include "mgtok/dataset.hpp"
#include "mgtok/report.hpp"

namespace mgtok {

/// Line-delimited JSON event log. A default-constructed log discards events.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(const std::filesystem::path& file);

  void event(const std::string& name, std::initializer_list<std::pair<const char*, double>> numbers = {},
             std::initializer_list<std::pair<const char*, std::string>> texts = {});

 private:
  std::unique_ptr<std::ofstream> out_;
  double start_ = 0.0;
};

/// Everything the models see for one scene.
struct PreparedScene {
  std::uint32_t scene_id = 0;
  /// Global + pooled locals + every object token (proposals, then background).
  TokenBundle full;
  /// Raw patch grid only; input of the patch-only comparison model.
  TokenBundle patches;
  MaskSet masks;
  /// Equal-budget bundles for the mask-family comparison.
  std::optional<TokenBundle> sam_like, bbox, tiled;

  double initial_mass_sum = 0.0;
  double final_mass_sum = 0.0;
  std::size_t object_tokens = 0;
  /// map_iou_after of the tokens built from unjittered object masks.
  std::vector<double> gt_map_iou;
};

/// Frozen encoder plus the per-scene token construction.
class TokenFactory {
 public:
  explicit TokenFactory(const ExperimentConfig& cfg);

  const VisionEncoder& encoder() const { return encoder_; }
  /// Proposal jitter for scene `id` draws from a stream derived from the
  /// config seed and the id, so results do not depend on scheduling.
  PreparedScene prepare(const Scene& scene, bool mask_families) const;
  std::vector<PreparedScene> prepare_all(std::span<const Scene> scenes, bool mask_families) const;

 private:
  TokenBundle bundle_from(const ImageFeatureSet& features, const VecGrid& locals, const MaskSet& masks) const;

  ExperimentConfig cfg_;
  VisionEncoder encoder_;
};

InversionSummary summarize_inversion(std::span<const PreparedScene> scenes);

/// Names of the mask families in report order.
inline constexpr std::array<const char*, 3> kMaskFamilies{"sam_like", "bbox", "tiled"};

struct FamilyModel {
  std::string family;
  VlmModel model;
};

struct TrainedModels {
  VlmModel main;
  std::optional<VlmModel> patch_only;
  /// One model per mask family when cfg.mask_ablation_per_family is set.
  std::vector<FamilyModel> families;
  std::vector<StageSummary> stages;
};

/// Stage 1 on captions, then stage 2 on questions, for the main model,
/// (if enabled) the patch-only model and (if enabled and the scenes carry
/// family bundles) one model per mask family.
TrainedModels train_models(const ExperimentConfig& cfg, const Dataset& data, std::span<const PreparedScene> train,
                           std::uint32_t encoder_crc, EventLog& log);

/// True iff greedy decoding of `question` reproduces `answer` exactly and
/// then stops. Uses one teacher-forced pass: greedy output matches iff the
/// argmax at every answer position is the reference token.
bool greedy_matches(const ToyDecoder& decoder, const Mat& visual, std::span<const int> question,
                    std::span<const int> answer_with_eos);

/// Per-scene copy of a plan: prune_random draws a different subset per
/// scene from plan.seed and the scene id.
ReductionPlan plan_for_scene(const ReductionPlan& plan, std::uint32_t scene_id);

/// Main-model rows for every configured plan, then patch-only rows.
std::vector<EvalRow> evaluate_reduction(const ExperimentConfig& cfg, const Dataset& data,
                                        std::span<const PreparedScene> test, const VlmModel& main,
                                        const VlmModel* patch_only);

/// Token-composition rows for the main model, then mask-family rows. A
/// family with an entry in `families` is scored with that model, any other
/// family with the main model.
std::vector<EvalRow> evaluate_ablations(const ExperimentConfig& cfg, const Dataset& data,
                                        std::span<const PreparedScene> test, const VlmModel& main,
                                        std::span<const FamilyModel> families = {});

/// Scene ranges of the two splits inside a generated dataset.
std::span<const Scene> train_split(const Dataset& data, const ExperimentConfig& cfg);
std::span<const Scene> test_split(const Dataset& data, const ExperimentConfig& cfg);

/// Generates (or reuses) the dataset, builds tokens, trains once and
/// evaluates every plan, baseline and ablation. Writes checkpoints, results
/// and log.jsonl into out_dir. On failure the rows finished so far are
/// written with a "partial" status before the error propagates.
ExperimentResults run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                 const Dataset* data = nullptr);

}  // namespace mgtok
