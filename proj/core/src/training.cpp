#include "mgtok/training.hpp"

#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

namespace mgtok {

TrainConfig TrainConfig::pretrain_defaults() {
  TrainConfig c;
  c.stage = Stage::pretrain;
  c.lr = 1e-3;
  c.batch = 256;
  c.freeze_decoder = true;
  return c;
}

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.stage = Stage::finetune;
  c.lr = 2e-5;
  c.batch = 128;
  c.freeze_decoder = false;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::config, "train config: " + m); };
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and >= 0");
  if (batch == 0) fail("batch must be >= 1");
  if (epochs < 0) fail("epochs must be >= 0");
  if (stage == Stage::pretrain && !freeze_decoder) fail("pretrain stage requires a frozen decoder");
  if (stage == Stage::finetune && freeze_decoder) fail("finetune stage trains the decoder; freeze_decoder must be false");
  if (!(divergence_factor > 1.0)) fail("divergence_factor must exceed 1");
}

double example_loss_and_grad(const VlmModel& model, const Mat& visual_input,
                             const TrainExample& example, ParamStore* projector_grads,
                             ParamStore* decoder_grads) {
  const TrainExample* one[] = {&example};
  return group_loss_and_grad(model, visual_input, one, projector_grads, decoder_grads);
}

double group_loss_and_grad(const VlmModel& model, const Mat& visual_input,
                           std::span<const TrainExample* const> examples, ParamStore* projector_grads,
                           ParamStore* decoder_grads) {
  std::vector<std::vector<int>> texts;
  std::vector<std::size_t> firsts;
  for (const TrainExample* ex : examples) {
    texts.push_back(build_text(ex->question, ex->answer));
    firsts.push_back(ex->question.size() + 2);
  }
  Projector::Cache pc;
  const Mat visual = model.projector.forward(visual_input, &pc);
  if (!projector_grads) return model.decoder.loss_shared(visual, texts, firsts, decoder_grads, nullptr);
  Mat d_visual;
  const double loss = model.decoder.loss_shared(visual, texts, firsts, decoder_grads, &d_visual);
  model.projector.backward(d_visual, pc, projector_grads);
  return loss;
}

namespace {

class Adam {
 public:
  explicit Adam(const ParamStore& like) : m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(ParamStore& params, const ParamStore& grads, double lr, double weight_decay) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grads[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grads[i].cwiseProduct(grads[i]);
      const Mat update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + kEps);
      params[i] -= lr * (update + weight_decay * params[i]);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  ParamStore m_, v_;
  int t_ = 0;
};

TrainReport train_impl(VlmModel& model, std::span<const Mat> visuals,
                       std::span<const TrainExample> data, const TrainConfig& cfg,
                       const TrainProgress& progress) {
  cfg.validate();
  if (data.empty()) throw_invalid("training set is empty");
  for (const TrainExample& ex : data) {
    if (ex.visual_index >= visuals.size()) throw_invalid("example refers to a missing visual input");
    if (ex.answer.empty()) throw_invalid("example without answer tokens");
  }
  const bool train_decoder = !cfg.freeze_decoder;
  TrainReport report;
  report.projector_checksum_before = model.projector.params().checksum();
  report.decoder_checksum_before = model.decoder.params().checksum();

  Adam proj_opt(model.projector.params());
  Adam dec_opt(model.decoder.params());
  ParamStore proj_acc = model.projector.params().zeros_like();
  ParamStore dec_acc = model.decoder.params().zeros_like();

  // Examples that share a visual input are evaluated together in one
  // shared-prefix pass. Groups are shuffled as units; a batch takes whole
  // groups until it holds at least cfg.batch examples.
  std::vector<std::vector<const TrainExample*>> groups;
  {
    std::vector<std::ptrdiff_t> slot(visuals.size(), -1);
    for (const TrainExample& ex : data) {
      auto& g = slot[ex.visual_index];
      if (g < 0) {
        g = static_cast<std::ptrdiff_t>(groups.size());
        groups.emplace_back();
      }
      groups[static_cast<std::size_t>(g)].push_back(&ex);
    }
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  bool have_initial = false;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size();) {
      std::size_t end = start;
      std::size_t m = 0;
      while (end < order.size() && m < cfg.batch) m += groups[order[end++]].size();
      const std::size_t n_groups = end - start;
      // Per-group gradients land in their own slots and are reduced in
      // order, so the update does not depend on the worker count.
      std::vector<ParamStore> pg(n_groups), dg(n_groups);
      std::vector<double> losses(n_groups);
      parallel_for(n_groups, cfg.workers, [&](std::size_t k) {
        const auto& group = groups[order[start + k]];
        pg[k] = model.projector.params().zeros_like();
        if (train_decoder) dg[k] = model.decoder.params().zeros_like();
        losses[k] = group_loss_and_grad(model, visuals[group.front()->visual_index], group, &pg[k],
                                        train_decoder ? &dg[k] : nullptr);
      });
      proj_acc.set_zero();
      dec_acc.set_zero();
      double batch_loss = 0.0;
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t k = 0; k < n_groups; ++k) {
        proj_acc.add_scaled(pg[k], inv_m);
        if (train_decoder) dec_acc.add_scaled(dg[k], inv_m);
        batch_loss += losses[k];
      }
      batch_loss *= inv_m;
      start = end;
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::divergence, "non-finite training loss at step " + std::to_string(report.steps));
      }
      if (!have_initial) {
        report.initial_loss = batch_loss;
        have_initial = true;
      } else if (batch_loss > cfg.divergence_factor * report.initial_loss) {
        throw Error(ErrorCode::divergence,
                    "training diverged at step " + std::to_string(report.steps) + ": batch loss " +
                        std::to_string(batch_loss) + " vs initial " + std::to_string(report.initial_loss));
      }
      if (cfg.clip_norm > 0.0) {
        const double norm = std::sqrt(proj_acc.squared_norm() + (train_decoder ? dec_acc.squared_norm() : 0.0));
        if (norm > cfg.clip_norm) {
          const double scale = cfg.clip_norm / norm;
          for (std::size_t i = 0; i < proj_acc.size(); ++i) proj_acc[i] *= scale;
          for (std::size_t i = 0; i < dec_acc.size(); ++i) dec_acc[i] *= scale;
        }
      }
      proj_opt.step(model.projector.params(), proj_acc, cfg.lr, cfg.weight_decay);
      if (train_decoder) dec_opt.step(model.decoder.params(), dec_acc, cfg.lr, cfg.weight_decay);
      epoch_sum += batch_loss * static_cast<double>(m);
      ++report.steps;
    }
    const double mean = epoch_sum / static_cast<double>(data.size());
    report.epoch_loss.push_back(mean);
    if (progress) progress(epoch, mean);
  }
  report.final_loss = report.epoch_loss.empty() ? report.initial_loss : report.epoch_loss.back();
  report.projector_checksum_after = model.projector.params().checksum();
  report.decoder_checksum_after = model.decoder.params().checksum();
  if (!train_decoder && report.decoder_checksum_after != report.decoder_checksum_before) {
    throw Error(ErrorCode::invalid_argument, "frozen decoder weights changed during training");
  }
  return report;
}

}  // namespace

TrainReport train_stage1(VlmModel& model, std::span<const Mat> visual_inputs,
                         std::span<const TrainExample> data, const TrainConfig& cfg,
                         const TrainProgress& progress) {
  if (cfg.stage != Stage::pretrain) throw Error(ErrorCode::config, "train_stage1 needs stage = pretrain");
  return train_impl(model, visual_inputs, data, cfg, progress);
}

TrainReport train_stage2(VlmModel& model, std::span<const Mat> visual_inputs,
                         std::span<const TrainExample> data, const TrainConfig& cfg,
                         const TrainProgress& progress) {
  if (cfg.stage != Stage::finetune) throw Error(ErrorCode::config, "train_stage2 needs stage = finetune");
  return train_impl(model, visual_inputs, data, cfg, progress);
}

}  // namespace mgtok
