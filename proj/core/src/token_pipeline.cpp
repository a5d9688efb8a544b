#include "mgtok/token_pipeline.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

namespace mgtok {

std::size_t TokenBundle::count(TokenKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [kind](const Token& t) { return t.kind == kind; }));
}

Mat TokenBundle::embedding_matrix() const {
  Mat m(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(dim()));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = tokens[i].embedding.transpose();
  return m;
}

namespace {

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

bool same_meta(const TokenMeta& a, const TokenMeta& b) {
  return a.source_index == b.source_index && a.grid_row == b.grid_row &&
         a.grid_col == b.grid_col && a.mask_id == b.mask_id && same_bits(a.confidence, b.confidence) &&
         a.background == b.background && same_bits(a.final_loss, b.final_loss) &&
         same_bits(a.map_iou, b.map_iou) && bitwise_equal(a.pos_embedding, b.pos_embedding);
}

}  // namespace

bool operator==(const TokenBundle& a, const TokenBundle& b) {
  if (a.tokens.size() != b.tokens.size() || a.scaled != b.scaled ||
      a.scale_mode != b.scale_mode || !same_bits(a.patch_stats.mu, b.patch_stats.mu) ||
      !same_bits(a.patch_stats.sigma, b.patch_stats.sigma) || a.local_rows != b.local_rows ||
      a.local_cols != b.local_cols) {
    return false;
  }
  for (std::size_t i = 0; i < a.tokens.size(); ++i) {
    const Token& x = a.tokens[i];
    const Token& y = b.tokens[i];
    if (x.kind != y.kind || !bitwise_equal(x.embedding, y.embedding) || !same_meta(x.meta, y.meta))
      return false;
  }
  return true;
}

PatchStats compute_patch_stats(std::span<const Vec> locals) {
  if (locals.size() < 2) throw_invalid("patch statistics need at least two local tokens");
  double sum = 0.0;
  for (const Vec& v : locals) sum += v.norm();
  const double mu = sum / static_cast<double>(locals.size());
  double ss = 0.0;
  for (const Vec& v : locals) ss += (v.norm() - mu) * (v.norm() - mu);
  return {mu, std::sqrt(ss / static_cast<double>(locals.size()))};
}

PatchStats compute_entry_stats(std::span<const Vec> locals) {
  if (locals.size() < 2) throw_invalid("patch statistics need at least two local tokens");
  double sum = 0.0;
  std::size_t n = 0;
  for (const Vec& v : locals) {
    sum += v.sum();
    n += static_cast<std::size_t>(v.size());
  }
  const double mu = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const Vec& v : locals) ss += (v.array() - mu).square().sum();
  return {mu, std::sqrt(ss / static_cast<double>(n))};
}

Vec scale_token(const Vec& token, const PatchStats& stats, const ScaleOptions& options) {
  if (options.mode == ScaleMode::norm_retarget) {
    const double norm = token.norm();
    if (!(norm > 0.0)) throw_invalid("cannot rescale a zero-norm token");
    const double target = stats.mu + options.spread * stats.sigma;
    return token * (target / norm);
  }
  const double mean = token.mean();
  const double sd = std::sqrt((token.array() - mean).square().mean());
  if (!(sd > 0.0)) throw_invalid("cannot standardize a constant token");
  return (((token.array() - mean) / sd) * stats.sigma + stats.mu).matrix();
}

TokenBundle assemble(const std::optional<Vec>& global, const VecGrid& locals,
                     std::span<const ObjectToken> objects, bool do_scale,
                     const ScaleOptions& options) {
  std::optional<Eigen::Index> dim;
  auto check_dim = [&dim](const Vec& v) {
    if (!dim) dim = v.size();
    if (v.size() != *dim) throw_shape("token dimensions disagree in assemble");
  };
  if (global) check_dim(*global);
  for (const Vec& v : locals) check_dim(v);
  for (const ObjectToken& o : objects) check_dim(o.embedding);

  TokenBundle b;
  b.scale_mode = options.mode;
  b.local_rows = static_cast<int>(locals.rows());
  b.local_cols = static_cast<int>(locals.cols());
  if (do_scale) {
    b.patch_stats = options.mode == ScaleMode::norm_retarget ? compute_patch_stats(locals.values())
                                                             : compute_entry_stats(locals.values());
    if (b.patch_stats.sigma == 0.0) {
      spdlog::warn("patch statistics have sigma = 0; scaling targets mu only");
    }
    b.scaled = true;
  }
  auto maybe_scale = [&](const Vec& v) { return do_scale ? scale_token(v, b.patch_stats, options) : v; };

  if (global) {
    TokenMeta meta;
    meta.source_index = 0;
    b.tokens.push_back({TokenKind::global, maybe_scale(*global), std::move(meta)});
  }
  for (std::size_t r = 0; r < locals.rows(); ++r) {
    for (std::size_t c = 0; c < locals.cols(); ++c) {
      TokenMeta meta;
      meta.source_index = static_cast<std::int32_t>(r * locals.cols() + c);
      meta.grid_row = static_cast<std::int32_t>(r);
      meta.grid_col = static_cast<std::int32_t>(c);
      b.tokens.push_back({TokenKind::local, locals(r, c), std::move(meta)});
    }
  }

  std::vector<std::size_t> order(objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (objects[x].is_background != objects[y].is_background) return !objects[x].is_background;
    return objects[x].confidence > objects[y].confidence;
  });
  for (std::size_t idx : order) {
    const ObjectToken& o = objects[idx];
    TokenMeta meta;
    meta.source_index = static_cast<std::int32_t>(idx);
    meta.mask_id = o.source_mask_id;
    meta.confidence = o.confidence;
    meta.background = o.is_background;
    meta.final_loss = o.final_loss;
    meta.map_iou = o.map_iou_after;
    meta.pos_embedding = o.pos_embedding;
    b.tokens.push_back({TokenKind::object, maybe_scale(o.embedding), std::move(meta)});
  }
  return b;
}

BundleLayout layout_of(const TokenBundle& bundle) {
  return {bundle.count(TokenKind::global), bundle.count(TokenKind::local),
          bundle.count(TokenKind::object), bundle.local_rows, bundle.local_cols};
}

namespace {

[[noreturn]] void infeasible(const std::string& what, std::size_t available, std::size_t requested) {
  throw Error(ErrorCode::infeasible_plan, what + ": available " + std::to_string(available) +
                                              ", requested " + std::to_string(requested));
}

std::size_t predicted_locals(const ReductionPlan& plan, const BundleLayout& layout) {
  switch (plan.patch) {
    case PatchStrategy::keep_all:
      return layout.locals;
    case PatchStrategy::pool:
    case PatchStrategy::maxpool: {
      const auto rows = static_cast<std::size_t>(layout.local_rows);
      const auto cols = static_cast<std::size_t>(layout.local_cols);
      if (rows * cols != layout.locals || rows == 0) {
        throw Error(ErrorCode::infeasible_plan, "pooling needs an intact local grid");
      }
      if (plan.kernel < 1 || rows % static_cast<std::size_t>(plan.kernel) != 0 ||
          cols % static_cast<std::size_t>(plan.kernel) != 0) {
        throw Error(ErrorCode::infeasible_plan,
                    "pool kernel " + std::to_string(plan.kernel) + " does not divide local grid " +
                        std::to_string(rows) + "x" + std::to_string(cols));
      }
      const auto k = static_cast<std::size_t>(plan.kernel);
      return (rows / k) * (cols / k);
    }
    case PatchStrategy::prune_random:
    case PatchStrategy::prune_topk_norm:
      if (plan.patch_keep > layout.locals) infeasible("local tokens", layout.locals, plan.patch_keep);
      return plan.patch_keep;
  }
  return 0;
}

}  // namespace

std::size_t predicted_count(const ReductionPlan& plan, const BundleLayout& layout) {
  const std::size_t locals = predicted_locals(plan, layout);
  std::size_t objects = layout.objects;
  if (plan.object_keep) {
    if (*plan.object_keep > layout.objects) infeasible("object tokens", layout.objects, *plan.object_keep);
    objects = *plan.object_keep;
  }
  return (plan.use_global ? layout.globals : 0) + locals + objects;
}

TokenBundle reduce(const TokenBundle& bundle, const ReductionPlan& plan) {
  const BundleLayout layout = layout_of(bundle);
  predicted_count(plan, layout);  // validates feasibility

  std::vector<const Token*> globals, locals, objects;
  for (const Token& t : bundle.tokens) {
    (t.kind == TokenKind::global ? globals : t.kind == TokenKind::local ? locals : objects)
        .push_back(&t);
  }

  TokenBundle out;
  out.scaled = bundle.scaled;
  out.scale_mode = bundle.scale_mode;
  out.patch_stats = bundle.patch_stats;
  out.local_rows = bundle.local_rows;
  out.local_cols = bundle.local_cols;

  if (plan.use_global)
    for (const Token* t : globals) out.tokens.push_back(*t);

  switch (plan.patch) {
    case PatchStrategy::keep_all:
      for (const Token* t : locals) out.tokens.push_back(*t);
      break;
    case PatchStrategy::pool:
    case PatchStrategy::maxpool: {
      VecGrid grid(static_cast<std::size_t>(bundle.local_rows),
                   static_cast<std::size_t>(bundle.local_cols));
      for (std::size_t i = 0; i < locals.size(); ++i) grid[i] = locals[i]->embedding;
      const auto k = static_cast<std::size_t>(plan.kernel);
      const VecGrid pooled =
          plan.patch == PatchStrategy::pool ? avg_pool_2d(grid, k) : max_pool_2d(grid, k);
      for (std::size_t r = 0; r < pooled.rows(); ++r) {
        for (std::size_t c = 0; c < pooled.cols(); ++c) {
          TokenMeta meta;
          meta.source_index = static_cast<std::int32_t>(r * pooled.cols() + c);
          meta.grid_row = static_cast<std::int32_t>(r);
          meta.grid_col = static_cast<std::int32_t>(c);
          out.tokens.push_back({TokenKind::local, pooled(r, c), std::move(meta)});
        }
      }
      out.local_rows = static_cast<int>(pooled.rows());
      out.local_cols = static_cast<int>(pooled.cols());
      break;
    }
    case PatchStrategy::prune_random:
    case PatchStrategy::prune_topk_norm: {
      std::vector<std::size_t> idx(locals.size());
      std::iota(idx.begin(), idx.end(), 0);
      if (plan.patch == PatchStrategy::prune_random) {
        Rng rng(plan.seed);
        rng.shuffle(idx.begin(), idx.end());
      } else {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
          return locals[a]->embedding.norm() > locals[b]->embedding.norm();
        });
      }
      idx.resize(plan.patch_keep);
      std::sort(idx.begin(), idx.end());
      for (std::size_t i : idx) out.tokens.push_back(*locals[i]);
      if (plan.patch_keep != locals.size()) out.local_rows = out.local_cols = 0;
      break;
    }
  }

  const std::size_t n_obj = plan.object_keep.value_or(objects.size());
  for (std::size_t i = 0; i < n_obj; ++i) out.tokens.push_back(*objects[i]);
  return out;
}

TokenBundle keep_objects(const TokenBundle& bundle, std::span<const int> mask_ids) {
  TokenBundle out = bundle;
  std::erase_if(out.tokens, [&](const Token& t) {
    return t.kind == TokenKind::object &&
           std::find(mask_ids.begin(), mask_ids.end(), t.meta.mask_id) == mask_ids.end();
  });
  return out;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  return parts;
}

template <class T>
T parse_number(const std::string& s, const std::string& what) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw Error(ErrorCode::config, "bad " + what + ": '" + s + "'");
  return v;
}

}  // namespace

std::string ReductionPlan::to_string() const {
  std::string patch_text;
  switch (patch) {
    case PatchStrategy::keep_all: patch_text = "keep_all"; break;
    case PatchStrategy::pool: patch_text = "pool:" + std::to_string(kernel); break;
    case PatchStrategy::maxpool: patch_text = "maxpool:" + std::to_string(kernel); break;
    case PatchStrategy::prune_random:
      patch_text = "prune_random:" + std::to_string(patch_keep) + ":" + std::to_string(seed);
      break;
    case PatchStrategy::prune_topk_norm:
      patch_text = "prune_topk_norm:" + std::to_string(patch_keep);
      break;
  }
  std::string s;
  if (!name.empty()) s += "name=" + name + ",";
  s += "patch=" + patch_text;
  s += ",objects=" + (object_keep ? std::to_string(*object_keep) : std::string("all"));
  s += std::string(",global=") + (use_global ? "on" : "off");
  if (dedup_iou) s += ",dedup=" + fmt_double(*dedup_iou);
  return s;
}

ReductionPlan ReductionPlan::parse(const std::string& text) {
  ReductionPlan plan;
  for (const std::string& item : split(text, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::config, "plan item without '=': " + item);
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "name") {
      plan.name = value;
    } else if (key == "patch") {
      const auto parts = split(value, ':');
      const std::string& kind = parts[0];
      auto arity = [&](std::size_t n) {
        if (parts.size() != n) throw Error(ErrorCode::config, "bad patch strategy: " + value);
      };
      if (kind == "keep_all") {
        arity(1);
        plan.patch = PatchStrategy::keep_all;
      } else if (kind == "pool" || kind == "maxpool") {
        arity(2);
        plan.patch = kind == "pool" ? PatchStrategy::pool : PatchStrategy::maxpool;
        plan.kernel = parse_number<int>(parts[1], "pool kernel");
      } else if (kind == "prune_random") {
        arity(3);
        plan.patch = PatchStrategy::prune_random;
        plan.patch_keep = parse_number<std::size_t>(parts[1], "patch count");
        plan.seed = parse_number<std::uint64_t>(parts[2], "seed");
      } else if (kind == "prune_topk_norm") {
        arity(2);
        plan.patch = PatchStrategy::prune_topk_norm;
        plan.patch_keep = parse_number<std::size_t>(parts[1], "patch count");
      } else {
        throw Error(ErrorCode::config, "unknown patch strategy: " + kind);
      }
    } else if (key == "objects") {
      if (value == "all") {
        plan.object_keep.reset();
      } else {
        plan.object_keep = parse_number<std::size_t>(value, "object count");
      }
    } else if (key == "global") {
      if (value != "on" && value != "off") throw Error(ErrorCode::config, "global must be on|off");
      plan.use_global = value == "on";
    } else if (key == "dedup") {
      if (value == "off") {
        plan.dedup_iou.reset();
      } else {
        plan.dedup_iou = parse_number<double>(value, "dedup threshold");
      }
    } else {
      throw Error(ErrorCode::config, "unknown plan key: " + key);
    }
  }
  return plan;
}

}  // namespace mgtok
