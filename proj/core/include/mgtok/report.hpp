#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgtok/scene.hpp"

namespace mgtok {

/// 1 - tokens / reference.
double reduction_ratio(std::size_t tokens, std::size_t reference);
/// Two decimals, e.g. "0.75".
std::string format_ratio(double ratio);
/// Whole percent, e.g. "75%".
std::string format_percent(double ratio);

struct KindScore {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct EvalRow {
  /// "reduction", "baseline", "composition" or "mask_type".
  std::string group;
  std::string name;
  /// "main" or "patch_only".
  std::string model;
  std::string plan;
  std::size_t tokens = 0;
  double reduction_ratio = 0.0;
  std::array<KindScore, 4> by_kind{};
  std::uint32_t checkpoint_crc = 0;
  double wall_seconds = 0.0;

  double accuracy(QuestionKind k) const { return by_kind[static_cast<std::size_t>(k)].accuracy(); }
  /// Mean over the question kinds that occur.
  double macro_accuracy() const;
  std::size_t questions() const;
};

struct StageSummary {
  std::string model;
  std::string stage;
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
  std::uint32_t encoder_crc_before = 0;
  std::uint32_t encoder_crc_after = 0;
  double wall_seconds = 0.0;
};

struct InversionSummary {
  std::size_t scenes = 0;
  std::size_t tokens = 0;
  double mean_initial_mass = 0.0;
  double mean_final_mass = 0.0;
  /// Over tokens of unjittered ground-truth masks.
  double median_gt_map_iou = 0.0;
  double wall_seconds = 0.0;
};

struct ExperimentResults {
  /// "complete", or "partial: <reason>".
  std::string status = "complete";
  std::string config;
  std::size_t reference_tokens = 0;
  std::size_t full_tokens = 0;
  InversionSummary inversion;
  std::vector<StageSummary> training;
  std::vector<EvalRow> rows;

  const EvalRow* find(const std::string& group, const std::string& name) const;
};

/// Stable columns; wall time is left out so equal runs give equal bytes.
std::string to_csv(const ExperimentResults& results);
std::string to_json(const ExperimentResults& results);
ExperimentResults results_from_json(const std::string& text);
/// Aligned plain-text table, one block per row group.
std::string to_table(const ExperimentResults& results);

/// Writes results.csv, results.json and results.txt into `dir`.
void write_results(const ExperimentResults& results, const std::filesystem::path& dir);
ExperimentResults read_results(const std::filesystem::path& json_file);

}  // namespace mgtok
