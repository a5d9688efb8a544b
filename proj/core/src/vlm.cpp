#include "mgtok/vlm.hpp"

#include <algorithm>
#include <cmath>

#include "nn_ops.hpp"

namespace mgtok {

namespace {

Mat column(const Vec& v) { return v; }

Mat add_row_bias(const Mat& x, const Mat& bias) { return x.rowwise() + bias.col(0).transpose(); }

}  // namespace

Projector::Projector(const ProjectorConfig& config) : config_(config) {
  if (config.in_dim <= 0 || config.hidden_dim <= 0 || config.out_dim <= 0)
    throw Error(ErrorCode::config, "projector dimensions must be positive");
  Rng rng(config.seed);
  params_.add("proj.w1", nn::random_matrix(config.in_dim, config.hidden_dim,
                                           1.0 / std::sqrt(config.in_dim), rng));
  params_.add("proj.b1", Mat::Zero(config.hidden_dim, 1));
  params_.add("proj.w2", nn::random_matrix(config.hidden_dim, config.out_dim,
                                           1.0 / std::sqrt(config.hidden_dim), rng));
  params_.add("proj.b2", Mat::Zero(config.out_dim, 1));
}

Projector Projector::identity(int dim, double offset) {
  Projector p(ProjectorConfig{dim, dim, dim, 0});
  p.params_[kW1] = Mat::Identity(dim, dim);
  p.params_[kB1] = Mat::Constant(dim, 1, offset);
  p.params_[kW2] = Mat::Identity(dim, dim);
  p.params_[kB2] = Mat::Constant(dim, 1, -offset);
  return p;
}

Mat Projector::forward(const Mat& tokens, Cache* cache) const {
  if (tokens.cols() != config_.in_dim) {
    throw_shape("projector expects dim " + std::to_string(config_.in_dim) + ", got " +
                std::to_string(tokens.cols()));
  }
  Mat pre = add_row_bias(tokens * params_[kW1], params_[kB1]);
  Mat hidden = nn::gelu(pre);
  Mat out = add_row_bias(hidden * params_[kW2], params_[kB2]);
  if (cache) {
    cache->input = tokens;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

Mat Projector::backward(const Mat& d_out, const Cache& cache, ParamStore* grads) const {
  if (grads) {
    (*grads)[kW2] += cache.hidden.transpose() * d_out;
    (*grads)[kB2] += d_out.colwise().sum().transpose();
  }
  const Mat d_pre = nn::gelu_backward(d_out * params_[kW2].transpose(), cache.pre);
  if (grads) {
    (*grads)[kW1] += cache.input.transpose() * d_pre;
    (*grads)[kB1] += d_pre.colwise().sum().transpose();
  }
  return d_pre * params_[kW1].transpose();
}

void DecoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::config, "decoder config: " + m); };
  if (vocab_size <= special::count) fail("vocabulary must extend past the special tokens");
  if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0)
    fail("model_dim must be a positive multiple of heads");
  if (layers < 1 || ff_dim < 1 || context < 2) fail("layers, ff_dim and context must be positive");
}

ToyDecoder::ToyDecoder(const DecoderConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const int d = config_.model_dim;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_res = s / std::sqrt(2.0 * config_.layers);
  tok_emb_ = params_.add("dec.tok_emb", nn::random_matrix(config_.vocab_size, d, 1.0, rng));
  pos_emb_ = params_.add("dec.pos_emb", nn::random_matrix(config_.context, d, 0.1, rng));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".";
    LayerIndex li{};
    li.ln1_g = params_.add(p + "ln1_g", Mat::Ones(d, 1));
    li.ln1_b = params_.add(p + "ln1_b", Mat::Zero(d, 1));
    li.wq = params_.add(p + "wq", nn::random_matrix(d, d, s, rng));
    li.wk = params_.add(p + "wk", nn::random_matrix(d, d, s, rng));
    li.wv = params_.add(p + "wv", nn::random_matrix(d, d, s, rng));
    li.wo = params_.add(p + "wo", nn::random_matrix(d, d, s_res, rng));
    li.bo = params_.add(p + "bo", Mat::Zero(d, 1));
    li.ln2_g = params_.add(p + "ln2_g", Mat::Ones(d, 1));
    li.ln2_b = params_.add(p + "ln2_b", Mat::Zero(d, 1));
    li.w1 = params_.add(p + "w1", nn::random_matrix(d, config_.ff_dim, s, rng));
    li.b1 = params_.add(p + "b1", Mat::Zero(config_.ff_dim, 1));
    li.w2 = params_.add(p + "w2", nn::random_matrix(config_.ff_dim, d,
                                                    1.0 / std::sqrt(config_.ff_dim * 2.0 * config_.layers), rng));
    li.b2 = params_.add(p + "b2", Mat::Zero(d, 1));
    layers_.push_back(li);
  }
  lnf_g_ = params_.add("dec.lnf_g", Mat::Ones(d, 1));
  lnf_b_ = params_.add("dec.lnf_b", Mat::Zero(d, 1));
  w_out_ = params_.add("dec.w_out", nn::random_matrix(d, config_.vocab_size, s, rng));
  b_out_ = params_.add("dec.b_out", Mat::Zero(config_.vocab_size, 1));
}

void ToyDecoder::check_inputs(const Mat& visual, std::span<const std::vector<int>> texts) const {
  if (visual.rows() > 0 && visual.cols() != config_.model_dim) {
    throw_shape("visual tokens have dim " + std::to_string(visual.cols()) + ", decoder expects " +
                std::to_string(config_.model_dim));
  }
  for (const auto& text : texts) {
    if (visual.rows() + static_cast<Eigen::Index>(text.size()) > config_.context) {
      throw_invalid("sequence of " + std::to_string(visual.rows() + static_cast<Eigen::Index>(text.size())) +
                    " tokens exceeds context " + std::to_string(config_.context));
    }
    for (int id : text) {
      if (id < 0 || id >= config_.vocab_size)
        throw_invalid("token id " + std::to_string(id) + " outside vocabulary");
    }
  }
}

struct ToyDecoder::LayerCache {
  nn::LayerNormCache ln1, ln2;
  nn::AttentionCache attn;
  Mat h2, pre, act;
};

Mat ToyDecoder::forward_hidden(const Mat& visual, std::span<const std::vector<int>> texts,
                               std::vector<LayerCache>* caches) const {
  const Eigen::Index nv = visual.rows();
  std::vector<Eigen::Index> lengths;
  Eigen::Index n = nv;
  for (const auto& t : texts) {
    lengths.push_back(static_cast<Eigen::Index>(t.size()));
    n += lengths.back();
  }
  Mat x(n, config_.model_dim);
  if (nv > 0) x.topRows(nv) = visual;
  Eigen::Index row = nv;
  for (const auto& text : texts) {
    for (std::size_t t = 0; t < text.size(); ++t, ++row)
      x.row(row) = params_[tok_emb_].row(text[t]) + params_[pos_emb_].row(static_cast<Eigen::Index>(t));
  }
  const Mat mask = nn::segment_mask(nv, lengths);
  if (caches) caches->assign(layers_.size(), LayerCache{});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerIndex& li = layers_[l];
    LayerCache* c = caches ? &(*caches)[l] : nullptr;
    const Vec bo = params_[li.bo].col(0);
    const Mat h = nn::layer_norm(x, params_[li.ln1_g].col(0), params_[li.ln1_b].col(0),
                                 c ? &c->ln1 : nullptr);
    x += nn::attention(h, {&params_[li.wq], &params_[li.wk], &params_[li.wv], &params_[li.wo], &bo},
                       config_.heads, &mask, c ? &c->attn : nullptr);
    nn::LayerNormCache ln2;
    Mat h2 = nn::layer_norm(x, params_[li.ln2_g].col(0), params_[li.ln2_b].col(0), &ln2);
    Mat pre = add_row_bias(h2 * params_[li.w1], params_[li.b1]);
    Mat act = nn::gelu(pre);
    x += add_row_bias(act * params_[li.w2], params_[li.b2]);
    if (c) {
      c->ln2 = std::move(ln2);
      c->h2 = std::move(h2);
      c->pre = std::move(pre);
      c->act = std::move(act);
    }
  }
  return x;
}

Mat ToyDecoder::logits(const Mat& visual, std::span<const int> text) const {
  const std::vector<std::vector<int>> one{std::vector<int>(text.begin(), text.end())};
  return std::move(logits_shared(visual, one).front());
}

std::vector<Mat> ToyDecoder::logits_shared(const Mat& visual, std::span<const std::vector<int>> texts) const {
  check_inputs(visual, texts);
  const Mat x = forward_hidden(visual, texts, nullptr);
  std::vector<Mat> out;
  Eigen::Index row = visual.rows();
  for (const auto& text : texts) {
    const auto nt = static_cast<Eigen::Index>(text.size());
    const Mat h = nn::layer_norm(x.middleRows(row, nt), params_[lnf_g_].col(0), params_[lnf_b_].col(0), nullptr);
    out.push_back(add_row_bias(h * params_[w_out_], params_[b_out_]));
    row += nt;
  }
  return out;
}

double ToyDecoder::loss(const Mat& visual, std::span<const int> text, std::size_t first_target,
                        ParamStore* grads, Mat* d_visual) const {
  const std::vector<std::vector<int>> one{std::vector<int>(text.begin(), text.end())};
  const std::size_t first[] = {first_target};
  return loss_shared(visual, one, first, grads, d_visual);
}

double ToyDecoder::loss_shared(const Mat& visual, std::span<const std::vector<int>> texts,
                               std::span<const std::size_t> first_targets, ParamStore* grads,
                               Mat* d_visual) const {
  check_inputs(visual, texts);
  if (texts.empty() || first_targets.size() != texts.size())
    throw_invalid("loss needs one first-target index per text");
  const Eigen::Index nv = visual.rows();
  const int d = config_.model_dim;

  // Rows that predict a target, the target id, and the row's weight
  // (1 / targets in its text).
  std::vector<Eigen::Index> rows;
  std::vector<int> targets;
  std::vector<double> weights;
  Eigen::Index offset = nv;
  for (std::size_t s = 0; s < texts.size(); ++s) {
    const auto& text = texts[s];
    const std::size_t first = first_targets[s];
    if (first == 0 || first >= text.size())
      throw_invalid("loss needs at least one target token after the first text position");
    const double w = 1.0 / static_cast<double>(text.size() - first);
    for (std::size_t t = first; t < text.size(); ++t) {
      rows.push_back(offset + static_cast<Eigen::Index>(t) - 1);
      targets.push_back(text[t]);
      weights.push_back(w);
    }
    offset += static_cast<Eigen::Index>(text.size());
  }
  const Eigen::Index n = offset;
  const auto n_rows = static_cast<Eigen::Index>(rows.size());

  std::vector<LayerCache> caches;
  const bool backward = grads || d_visual;
  const Mat x = forward_hidden(visual, texts, backward ? &caches : nullptr);

  // Only text positions that predict a target need the head.
  Mat final_in(n_rows, d);
  for (Eigen::Index r = 0; r < n_rows; ++r) final_in.row(r) = x.row(rows[static_cast<std::size_t>(r)]);
  nn::LayerNormCache lnf;
  const Mat out = nn::layer_norm(final_in, params_[lnf_g_].col(0), params_[lnf_b_].col(0), &lnf);
  const Mat logits = add_row_bias(out * params_[w_out_], params_[b_out_]);

  double total = 0.0;
  Mat dlogits(n_rows, config_.vocab_size);
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const auto k = static_cast<std::size_t>(r);
    const Vec p = nn::softmax(logits.row(r).transpose());
    total -= weights[k] * std::log(p[targets[k]]);
    dlogits.row(r) = weights[k] * p.transpose();
    dlogits(r, targets[k]) -= weights[k];
  }
  if (!backward) return total;

  if (grads) {
    (*grads)[w_out_] += out.transpose() * dlogits;
    (*grads)[b_out_] += dlogits.colwise().sum().transpose();
  }
  const Mat d_out = dlogits * params_[w_out_].transpose();
  Vec dg = Vec::Zero(d), db = Vec::Zero(d);
  const Mat d_final_in = nn::layer_norm_backward(d_out, params_[lnf_g_].col(0), lnf,
                                                 grads ? &dg : nullptr, grads ? &db : nullptr);
  if (grads) {
    (*grads)[lnf_g_] += column(dg);
    (*grads)[lnf_b_] += column(db);
  }
  Mat dx = Mat::Zero(n, d);
  for (Eigen::Index r = 0; r < n_rows; ++r) dx.row(rows[static_cast<std::size_t>(r)]) += d_final_in.row(r);

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const LayerIndex& li = layers_[l];
    const LayerCache& c = caches[l];
    // MLP branch.
    if (grads) {
      (*grads)[li.w2] += c.act.transpose() * dx;
      (*grads)[li.b2] += dx.colwise().sum().transpose();
    }
    const Mat d_pre = nn::gelu_backward(dx * params_[li.w2].transpose(), c.pre);
    if (grads) {
      (*grads)[li.w1] += c.h2.transpose() * d_pre;
      (*grads)[li.b1] += d_pre.colwise().sum().transpose();
    }
    const Mat d_h2 = d_pre * params_[li.w1].transpose();
    Vec g2 = Vec::Zero(d), b2 = Vec::Zero(d);
    dx += nn::layer_norm_backward(d_h2, params_[li.ln2_g].col(0), c.ln2, grads ? &g2 : nullptr,
                                  grads ? &b2 : nullptr);
    // Attention branch.
    Vec d_bo = Vec::Zero(d);
    Mat dwq, dwk, dwv, dwo;
    if (grads) {
      dwq = Mat::Zero(d, d), dwk = Mat::Zero(d, d), dwv = Mat::Zero(d, d), dwo = Mat::Zero(d, d);
    }
    const nn::AttentionGrads ag{&dwq, &dwk, &dwv, &dwo, &d_bo};
    const Vec bo = params_[li.bo].col(0);
    const Mat d_h = nn::attention_backward(
        dx, {&params_[li.wq], &params_[li.wk], &params_[li.wv], &params_[li.wo], &bo},
        config_.heads, c.attn, grads ? &ag : nullptr);
    Vec g1 = Vec::Zero(d), b1 = Vec::Zero(d);
    dx += nn::layer_norm_backward(d_h, params_[li.ln1_g].col(0), c.ln1, grads ? &g1 : nullptr,
                                  grads ? &b1 : nullptr);
    if (grads) {
      (*grads)[li.ln2_g] += column(g2);
      (*grads)[li.ln2_b] += column(b2);
      (*grads)[li.wq] += dwq;
      (*grads)[li.wk] += dwk;
      (*grads)[li.wv] += dwv;
      (*grads)[li.wo] += dwo;
      (*grads)[li.bo] += column(d_bo);
      (*grads)[li.ln1_g] += column(g1);
      (*grads)[li.ln1_b] += column(b1);
    }
  }
  if (grads) {
    Eigen::Index row = nv;
    for (const auto& text : texts) {
      for (std::size_t t = 0; t < text.size(); ++t, ++row) {
        (*grads)[tok_emb_].row(text[t]) += dx.row(row);
        (*grads)[pos_emb_].row(static_cast<Eigen::Index>(t)) += dx.row(row);
      }
    }
  }
  if (d_visual) *d_visual = dx.topRows(nv);
  return total;
}

std::vector<int> build_text(std::span<const int> question, std::span<const int> answer) {
  std::vector<int> text;
  text.reserve(question.size() + answer.size() + 2);
  text.push_back(special::bos);
  text.insert(text.end(), question.begin(), question.end());
  text.push_back(special::sep);
  text.insert(text.end(), answer.begin(), answer.end());
  return text;
}

Mat project(const Projector& projector, const TokenBundle& bundle) {
  return projector.forward(bundle.embedding_matrix());
}

double forward_loss(const ToyDecoder& decoder, const Mat& visual, std::span<const int> question,
                    std::span<const int> answer) {
  if (answer.empty()) throw_invalid("forward_loss needs a nonempty answer");
  const auto text = build_text(question, answer);
  return decoder.loss(visual, text, question.size() + 2);
}

std::vector<int> generate(const ToyDecoder& decoder, const Mat& visual,
                          std::span<const int> question, std::size_t max_len,
                          std::span<const int> allowed) {
  std::vector<int> text = build_text(question, {});
  std::vector<int> answer;
  while (answer.size() < max_len) {
    const Mat logits = decoder.logits(visual, text);
    const auto row = logits.row(logits.rows() - 1);
    int best = -1;
    auto consider = [&](int id) {
      if (best < 0 || row[id] > row[best]) best = id;
    };
    if (allowed.empty()) {
      for (int id = 0; id < row.size(); ++id) consider(id);
    } else {
      for (int id : allowed) consider(id);
    }
    if (best == special::eos) break;
    answer.push_back(best);
    text.push_back(best);
  }
  return answer;
}

}  // namespace mgtok
