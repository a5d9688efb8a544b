#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mgtok/vlm.hpp"

namespace mgtok {

enum class Stage { pretrain, finetune };

struct TrainConfig {
  Stage stage = Stage::pretrain;
  double lr = 1e-3;
  /// Examples per step; whole groups sharing a visual input are kept
  /// together, so a step may hold slightly more.
  std::size_t batch = 32;
  int epochs = 1;
  std::uint64_t seed = 0;
  /// Must be true for pretrain and false for finetune.
  bool freeze_decoder = true;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
  /// Abort when a batch loss exceeds this multiple of the first batch loss.
  double divergence_factor = 10.0;
  std::size_t workers = 1;

  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();
  void validate() const;
};

struct TrainExample {
  std::size_t visual_index = 0;  // row block in the visual-input list
  std::vector<int> question;
  std::vector<int> answer;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::uint32_t projector_checksum_before = 0;
  std::uint32_t projector_checksum_after = 0;
  std::uint32_t decoder_checksum_before = 0;
  std::uint32_t decoder_checksum_after = 0;
  std::size_t steps = 0;
};

using TrainProgress = std::function<void(int epoch, double mean_loss)>;

/// Projector-only alignment on captioning pairs; the decoder is frozen.
TrainReport train_stage1(VlmModel& model, std::span<const Mat> visual_inputs,
                         std::span<const TrainExample> data, const TrainConfig& cfg,
                         const TrainProgress& progress = {});

/// Joint projector + decoder tuning on instruction triples.
TrainReport train_stage2(VlmModel& model, std::span<const Mat> visual_inputs,
                         std::span<const TrainExample> data, const TrainConfig& cfg,
                         const TrainProgress& progress = {});

/// Loss and gradients of one example through projector and decoder.
/// `decoder_grads` may be null to skip decoder weight gradients.
double example_loss_and_grad(const VlmModel& model, const Mat& visual_input,
                             const TrainExample& example, ParamStore* projector_grads,
                             ParamStore* decoder_grads);

/// Summed per-example losses (and gradients) of examples that share one
/// visual input, computed with a single shared-prefix decoder pass.
double group_loss_and_grad(const VlmModel& model, const Mat& visual_input,
                           std::span<const TrainExample* const> examples, ParamStore* projector_grads,
                           ParamStore* decoder_grads);

}  // namespace mgtok
