#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgtok/mask_inversion.hpp"
#include "mgtok/numerics.hpp"

namespace mgtok {

enum class TokenKind : std::uint8_t { global = 0, local = 1, object = 2 };

struct TokenMeta {
  std::int32_t source_index = -1;  // position in the producing list
  std::int32_t grid_row = -1;      // local tokens only
  std::int32_t grid_col = -1;
  std::int32_t mask_id = -1;  // object tokens only
  double confidence = 0.0;
  bool background = false;
  double final_loss = 0.0;
  double map_iou = 0.0;
  Vec pos_embedding;  // empty unless the object token carries one
};

struct Token {
  TokenKind kind = TokenKind::local;
  Vec embedding;
  TokenMeta meta;
};

enum class ScaleMode : std::uint8_t {
  /// Rescale the token to norm mu (+ spread * sigma) along its direction.
  norm_retarget = 0,
  /// Standardize the token's entries, then map them to mean mu, std sigma
  /// computed over all patch-token entries.
  literal_affine = 1,
};

struct ScaleOptions {
  ScaleMode mode = ScaleMode::norm_retarget;
  /// z in target_norm = mu + z * sigma; norm_retarget only.
  double spread = 0.0;
};

struct PatchStats {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Ordered [global?, locals (row-major), objects (confidence order)].
struct TokenBundle {
  std::vector<Token> tokens;
  bool scaled = false;
  ScaleMode scale_mode = ScaleMode::norm_retarget;
  PatchStats patch_stats;
  /// Shape of the local grid; 0 x 0 once the locals no longer form one.
  int local_rows = 0;
  int local_cols = 0;

  std::size_t count(TokenKind kind) const;
  std::size_t dim() const { return tokens.empty() ? 0 : static_cast<std::size_t>(tokens.front().embedding.size()); }
  /// Stacks the embeddings as rows.
  Mat embedding_matrix() const;
};

bool operator==(const TokenBundle& a, const TokenBundle& b);

/// Mean and population std of the L2 norms of the local tokens.
PatchStats compute_patch_stats(std::span<const Vec> locals);
/// Mean and population std over every entry of every local token.
PatchStats compute_entry_stats(std::span<const Vec> locals);

Vec scale_token(const Vec& token, const PatchStats& stats, const ScaleOptions& options = {});

/// Object tokens are ordered by descending confidence (ties by input
/// position) with background members after all proposals.
TokenBundle assemble(const std::optional<Vec>& global, const VecGrid& locals,
                     std::span<const ObjectToken> objects, bool do_scale,
                     const ScaleOptions& options = {});

enum class PatchStrategy : std::uint8_t { keep_all, pool, maxpool, prune_random, prune_topk_norm };

struct ReductionPlan {
  std::string name;
  PatchStrategy patch = PatchStrategy::keep_all;
  int kernel = 1;           // pool / maxpool
  std::size_t patch_keep = 0;  // prune_random / prune_topk_norm
  std::uint64_t seed = 0;   // prune_random
  /// Object tokens kept (confidence order); nullopt keeps all.
  std::optional<std::size_t> object_keep;
  bool use_global = true;
  /// If set, callers rank object tokens with dedup_ranking at this IoU before
  /// the object budget is applied: a budget is filled with distinct masks
  /// first and with suppressed ones only when distinct masks run out. With no
  /// budget only the survivors (and background) are kept.
  std::optional<double> dedup_iou;

  /// Compact form, e.g. "patch=pool:2,objects=5,global=on,dedup=0.5".
  std::string to_string() const;
  static ReductionPlan parse(const std::string& text);
};

struct BundleLayout {
  std::size_t globals = 0;
  std::size_t locals = 0;
  std::size_t objects = 0;
  int local_rows = 0;
  int local_cols = 0;
};

BundleLayout layout_of(const TokenBundle& bundle);

/// Token count reduce() will produce; throws infeasible_plan otherwise.
std::size_t predicted_count(const ReductionPlan& plan, const BundleLayout& layout);

TokenBundle reduce(const TokenBundle& bundle, const ReductionPlan& plan);

/// Drops object tokens whose mask_id is not listed, preserving order.
TokenBundle keep_objects(const TokenBundle& bundle, std::span<const int> mask_ids);

}  // namespace mgtok
