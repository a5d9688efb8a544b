#include "mgtok/mask_inversion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>


namespace mgtok {

namespace {

constexpr double kPositionBase = 100.0;
constexpr std::size_t kChunk = 16;

void check_mask_matches(const BitGrid& mask, const ImageFeatureSet& features) {
  const auto side = static_cast<std::size_t>(features.config.image_side);
  if (mask.rows() != side || mask.cols() != side) {
    throw_shape("mask is " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                ", image is " + std::to_string(side));
  }
}

Vec as_vec(const ScalarGrid& g) {
  return Eigen::Map<const Vec>(g.values().data(), static_cast<Eigen::Index>(g.size()));
}

ScalarGrid as_grid(const Vec& v, std::size_t side) {
  return ScalarGrid(side, side, std::vector<double>(v.data(), v.data() + v.size()));
}

// Row softmax of Q K^T / sqrt(d).
Mat map_rows(const Mat& queries, const Mat& keys) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  Mat logits = (queries * keys.transpose()) * scale;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - m).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

// Per-row loss for maps W against targets T.
Vec row_losses(const Mat& w, const Mat& t, const Mat& q, const Mat& anchor, InversionLoss loss,
               double reg) {
  Vec out(w.rows());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double l = 0.0;
    if (loss == InversionLoss::cross_entropy) {
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        if (t(i, j) > 0.0) l -= t(i, j) * std::log(w(i, j));
    } else {
      l = (w.row(i) - t.row(i)).squaredNorm();
    }
    out[i] = l + reg * (q.row(i) - anchor.row(i)).squaredNorm();
  }
  return out;
}

// Batched gradient of row_losses w.r.t. Q.
Mat row_gradients(const Mat& w, const Mat& t, const Mat& q, const Mat& anchor, const Mat& keys,
                  InversionLoss loss, double reg) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  Mat dlogits;
  if (loss == InversionLoss::cross_entropy) {
    // d/dlogits of -sum t log softmax = softmax * sum(t) - t
    const Vec tsum = t.rowwise().sum();
    dlogits = (w.array().colwise() * tsum.array()).matrix() - t;
  } else {
    const Mat g = 2.0 * (w - t);
    const Vec dot = (w.array() * g.array()).rowwise().sum();
    dlogits = (w.array() * (g.array().colwise() - dot.array())).matrix();
  }
  return dlogits * keys * scale + 2.0 * reg * (q - anchor);
}

struct BatchResult {
  Mat queries;
  Vec initial_loss, final_loss;
};

// Plain gradient descent with per-row backtracking for a batch of targets.
BatchResult optimize_batch(const Mat& targets, const Mat& init, const Mat& keys,
                           const InversionConfig& cfg) {
  const Eigen::Index m = targets.rows();
  Mat q = init;
  Mat w = map_rows(q, keys);
  Vec loss = row_losses(w, targets, q, init, cfg.loss, cfg.reg_weight);
  BatchResult res;
  res.initial_loss = loss;
  for (int step = 0; step < cfg.steps; ++step) {
    const Mat grad = row_gradients(w, targets, q, init, keys, cfg.loss, cfg.reg_weight);
    Vec step_size = Vec::Constant(m, cfg.step_size);
    std::vector<Eigen::Index> pending(static_cast<std::size_t>(m));
    std::iota(pending.begin(), pending.end(), 0);
    const int attempts = cfg.backtracking ? cfg.max_halvings + 1 : 1;
    for (int attempt = 0; attempt < attempts && !pending.empty(); ++attempt) {
      const auto np = static_cast<Eigen::Index>(pending.size());
      Mat trial(np, q.cols()), t_sub(np, targets.cols()), a_sub(np, q.cols());
      for (Eigen::Index r = 0; r < np; ++r) {
        const Eigen::Index i = pending[static_cast<std::size_t>(r)];
        trial.row(r) = q.row(i) - step_size[i] * grad.row(i);
        t_sub.row(r) = targets.row(i);
        a_sub.row(r) = init.row(i);
      }
      const Mat w_trial = map_rows(trial, keys);
      const Vec l_trial = row_losses(w_trial, t_sub, trial, a_sub, cfg.loss, cfg.reg_weight);
      std::vector<Eigen::Index> still;
      for (Eigen::Index r = 0; r < np; ++r) {
        const Eigen::Index i = pending[static_cast<std::size_t>(r)];
        if (!std::isfinite(l_trial[r])) {
          if (!cfg.backtracking) {
            throw NumericError("non-finite inversion loss at step " + std::to_string(step),
                               static_cast<std::size_t>(step));
          }
        } else if (!cfg.backtracking || l_trial[r] <= loss[i]) {
          q.row(i) = trial.row(r);
          w.row(i) = w_trial.row(r);
          loss[i] = l_trial[r];
          continue;
        }
        step_size[i] *= 0.5;
        still.push_back(i);
      }
      pending = std::move(still);
    }
    if (!loss.allFinite()) {
      throw NumericError("non-finite inversion loss at step " + std::to_string(step),
                         static_cast<std::size_t>(step));
    }
  }
  res.queries = std::move(q);
  res.final_loss = std::move(loss);
  return res;
}

}  // namespace

void InversionConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::config, "inversion config: " + m); };
  if (steps < 1) fail("steps must be >= 1");
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) fail("step_size must be finite and >= 0");
  if (!(reg_weight >= 0.0)) fail("reg_weight must be >= 0");
  if (max_halvings < 0) fail("max_halvings must be >= 0");
}

ScalarGrid downsample_mask(const BitGrid& mask, int grid_side) {
  if (grid_side <= 0 || mask.rows() % static_cast<std::size_t>(grid_side) != 0 ||
      mask.cols() != mask.rows()) {
    throw_shape("grid side " + std::to_string(grid_side) + " does not divide mask side " +
                std::to_string(mask.rows()));
  }
  const std::size_t cell = mask.rows() / static_cast<std::size_t>(grid_side);
  const auto g = static_cast<std::size_t>(grid_side);
  ScalarGrid out(g, g, 0.0);
  const double inv = 1.0 / static_cast<double>(cell * cell);
  for (std::size_t y = 0; y < mask.rows(); ++y)
    for (std::size_t x = 0; x < mask.cols(); ++x)
      if (mask(y, x)) out(y / cell, x / cell) += inv;
  return out;
}

ScalarGrid mask_target(const BitGrid& mask, int grid_side) {
  ScalarGrid t = downsample_mask(mask, grid_side);
  const double total = std::accumulate(t.begin(), t.end(), 0.0);
  if (total == 0.0) {
    std::fill(t.begin(), t.end(), 1.0 / static_cast<double>(t.size()));
  } else {
    for (double& v : t) v /= total;
  }
  return t;
}

InversionObjective::InversionObjective(const ImageFeatureSet& features, ScalarGrid target,
                                       Vec anchor, InversionLoss loss, double reg_weight)
    : features_(&features),
      target_(std::move(target)),
      anchor_(std::move(anchor)),
      loss_(loss),
      reg_weight_(reg_weight) {
  if (target_.size() != static_cast<std::size_t>(features.key_matrix.rows()))
    throw_shape("target grid does not match the patch grid");
  if (anchor_.size() != features.key_matrix.cols()) throw_shape("anchor dimension mismatch");
}

double InversionObjective::value(const Vec& query) const {
  const ExplainabilityMap map = explain(*features_, query);
  double l = 0.0;
  for (std::size_t j = 0; j < target_.size(); ++j) {
    if (loss_ == InversionLoss::cross_entropy) {
      if (target_[j] > 0.0) l -= target_[j] * std::log(map.weights[j]);
    } else {
      l += (map.weights[j] - target_[j]) * (map.weights[j] - target_[j]);
    }
  }
  return l + reg_weight_ * (query - anchor_).squaredNorm();
}

Vec InversionObjective::gradient(const Vec& query) const {
  // Composed from explain_backward so that the map's own backward pass is
  // what gets checked against finite differences.
  const ExplainabilityMap map = explain(*features_, query);
  ScalarGrid upstream(map.weights.rows(), map.weights.cols(), 0.0);
  for (std::size_t j = 0; j < target_.size(); ++j) {
    if (loss_ == InversionLoss::cross_entropy) {
      upstream[j] = target_[j] > 0.0 ? -target_[j] / map.weights[j] : 0.0;
    } else {
      upstream[j] = 2.0 * (map.weights[j] - target_[j]);
    }
  }
  return explain_backward(*features_, query, upstream) + 2.0 * reg_weight_ * (query - anchor_);
}

double mass_inside(const ScalarGrid& weights, const ScalarGrid& cell_fractions) {
  double m = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j)
    if (cell_fractions[j] > 0.0) m += weights[j];
  return m;
}

double map_support_iou(const ScalarGrid& weights, const ScalarGrid& cell_fractions) {
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  std::size_t support = 0;
  for (double f : cell_fractions) support += f > 0.0 ? 1 : 0;
  if (support == 0) return 0.0;
  std::size_t inter = 0;
  for (std::size_t i = 0; i < support; ++i) inter += cell_fractions[order[i]] > 0.0 ? 1 : 0;
  return static_cast<double>(inter) / static_cast<double>(2 * support - inter);
}

namespace {

struct InversionJob {
  const BitGrid* mask;
  int id;
  bool background;
  double confidence;
  BBox bbox;
};

std::vector<ObjectToken> run_jobs(const std::vector<InversionJob>& jobs,
                                  const ImageFeatureSet& features, const InversionConfig& cfg,
                                  std::size_t workers) {
  cfg.validate();
  const int grid = features.config.grid_side();
  const auto side = static_cast<std::size_t>(grid);
  const Eigen::Index dim = features.key_matrix.cols();
  const Vec init = cfg.init == InversionInit::cls ? features.cls : Vec::Zero(dim);

  std::vector<ObjectToken> out(jobs.size());
  const std::size_t chunks = (jobs.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(jobs.size(), begin + kChunk);
    const auto m = static_cast<Eigen::Index>(end - begin);
    Mat targets(m, features.key_matrix.rows());
    std::vector<ScalarGrid> fractions;
    for (std::size_t k = begin; k < end; ++k) {
      check_mask_matches(*jobs[k].mask, features);
      fractions.push_back(downsample_mask(*jobs[k].mask, grid));
      targets.row(static_cast<Eigen::Index>(k - begin)) =
          as_vec(mask_target(*jobs[k].mask, grid)).transpose();
    }
    const Mat anchors = init.transpose().replicate(m, 1);
    const BatchResult res = optimize_batch(targets, anchors, features.key_matrix, cfg);
    const Mat w0 = map_rows(anchors, features.key_matrix);
    const Mat w1 = map_rows(res.queries, features.key_matrix);
    for (std::size_t k = begin; k < end; ++k) {
      const auto r = static_cast<Eigen::Index>(k - begin);
      const ScalarGrid& frac = fractions[k - begin];
      const ScalarGrid before = as_grid(w0.row(r).transpose(), side);
      const ScalarGrid after = as_grid(w1.row(r).transpose(), side);
      ObjectToken& t = out[k];
      t.embedding = res.queries.row(r).transpose();
      t.pos_embedding = Vec::Zero(dim);
      t.source_mask_id = jobs[k].id;
      t.is_background = jobs[k].background;
      t.confidence = jobs[k].confidence;
      t.bbox = jobs[k].bbox;
      t.initial_loss = res.initial_loss[r];
      t.final_loss = res.final_loss[r];
      t.initial_mass = mass_inside(before, frac);
      t.final_mass = mass_inside(after, frac);
      t.map_iou_after = map_support_iou(after, frac);
    }
  });
  return out;
}

}  // namespace

ObjectToken invert_mask(const BitGrid& mask, const ImageFeatureSet& features,
                        const InversionConfig& cfg) {
  const BBox box = tight_bbox(mask);
  std::vector<InversionJob> jobs{{&mask, 0, false, 1.0, box}};
  return run_jobs(jobs, features, cfg, 1).front();
}

std::vector<ObjectToken> invert_all(const MaskSet& masks, const ImageFeatureSet& features,
                                    const InversionConfig& cfg, std::size_t workers) {
  if (masks.member_count() == 0) throw_invalid("invert_all on an empty mask set");
  std::vector<InversionJob> jobs;
  jobs.reserve(masks.member_count());
  for (std::size_t i = 0; i < masks.proposals.size(); ++i) {
    const MaskProposal& p = masks.proposals[i];
    jobs.push_back({&p.mask, static_cast<int>(i), false, p.confidence, p.bbox});
  }
  if (masks.background) {
    const MaskProposal& b = *masks.background;
    jobs.push_back({&b.mask, static_cast<int>(masks.proposals.size()), true, b.confidence, b.bbox});
  }
  return run_jobs(jobs, features, cfg, workers);
}

Vec positional_embedding(const BBox& bbox, int image_side, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw_invalid("positional embedding dim must be even");
  if (image_side <= 0) throw_invalid("image side must be positive");
  const int half = dim / 2;
  const int pairs = (half + 1) / 2;
  const double coords[2] = {bbox.center_x() / image_side, bbox.center_y() / image_side};
  Vec pe(dim);
  for (int axis = 0; axis < 2; ++axis) {
    for (int j = 0; j < half; ++j) {
      const int k = j / 2;
      const double omega =
          2.0 * std::numbers::pi * std::pow(kPositionBase, -static_cast<double>(k) / pairs);
      const double angle = coords[axis] * omega;
      pe[axis * half + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ObjectToken attach_position(ObjectToken token, const Vec& pe) {
  if (pe.size() != token.embedding.size()) throw_shape("positional embedding dimension mismatch");
  token.embedding += pe;
  if (token.pos_embedding.size() != pe.size()) token.pos_embedding = Vec::Zero(pe.size());
  token.pos_embedding += pe;
  return token;
}

}  // namespace mgtok
