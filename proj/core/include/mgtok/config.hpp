#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mgtok/mask_inversion.hpp"
#include "mgtok/mask_ops.hpp"
#include "mgtok/scene.hpp"
#include "mgtok/token_pipeline.hpp"
#include "mgtok/training.hpp"
#include "mgtok/vision_encoder.hpp"
#include "mgtok/vlm.hpp"

namespace mgtok {

inline constexpr int kConfigSchemaVersion = 1;

struct ExperimentConfig {
  std::uint64_t seed = 0;

  SceneSpec scene;
  std::size_t train_scenes = 2400;
  std::size_t test_scenes = 600;
  int qa_per_scene = 4;

  EncoderConfig encoder{48, 4, 32, 2, 4, 0};
  /// Average-pooling kernel that turns the patch grid into local tokens.
  int local_pool = 2;
  /// Mask proposals per image before the background member is added.
  std::size_t proposals = 48;
  JitterParams jitter;
  InversionConfig inversion;
  bool scale_tokens = true;
  ScaleOptions scale;
  /// Add the bbox code before scaling (it is then rescaled with the token)
  /// or after scaling.
  bool position_before_scaling = true;

  ProjectorConfig projector{32, 64, 64, 7};
  DecoderConfig decoder{static_cast<int>(Vocabulary::standard().size()), 64, 2, 4, 128, 256, 11};
  TrainConfig stage1;
  TrainConfig stage2;

  /// Test-time plans for the main model, in report order.
  std::vector<ReductionPlan> plans;
  /// Train the patch-only comparison model and evaluate it at the budget of
  /// every plan by dropping random patches.
  bool patch_only_baseline = true;
  /// Object-token budget for the mask-family comparison.
  std::size_t mask_ablation_objects = 9;
  int tile_grid = 3;
  /// IoU for ranking the synthetic proposals before the family budget is
  /// taken (dedup_ranking); 0 takes plain confidence order.
  double mask_ablation_dedup_iou = 0.5;
  /// Train one model per mask family on that family's tokens instead of
  /// scoring every family with the main model.
  bool mask_ablation_per_family = true;
  /// Token count reduction ratios are measured against; 0 means the
  /// encoder's patch count.
  std::size_t reference_tokens = 0;

  std::size_t workers = 1;

  std::size_t effective_reference() const;
  void validate() const;
};

ExperimentConfig default_experiment_config();

/// Parses a config document. Keys missing from the document keep their
/// defaults; unknown keys are rejected. Each override is "dotted.key=value"
/// where value is JSON (bare words are taken as strings).
ExperimentConfig parse_config(const std::string& text, std::span<const std::string> overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});
/// Canonical form: every key, stable order.
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace mgtok
