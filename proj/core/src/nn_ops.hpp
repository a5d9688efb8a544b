#pragma once

// Dense building blocks shared by the frozen encoder and the trainable
// decoder. Activations are (tokens x features); weights are (in x out).

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mgtok/numerics.hpp"

namespace mgtok::nn {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Mat normalized;  // x-hat
  Vec inv_std;     // per row
};

inline Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, LayerNormCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Mat xhat(n, d);
  Vec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std[i];
  }
  Mat y = (xhat.array().rowwise() * gain.transpose().array()).rowwise() + bias.transpose().array();
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

/// Returns dx; accumulates into dgain/dbias when non-null.
inline Mat layer_norm_backward(const Mat& dy, const Vec& gain, const LayerNormCache& cache,
                               Vec* dgain, Vec* dbias) {
  const Mat& xhat = cache.normalized;
  if (dgain) *dgain += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
  if (dbias) *dbias += dy.colwise().sum().transpose();
  Mat dxhat = dy.array().rowwise() * gain.transpose().array();
  Mat dx(dy.rows(), dy.cols());
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_dxhat = dxhat.row(i).sum() * inv_d;
    const double mean_dxhat_xhat = dxhat.row(i).dot(xhat.row(i)) * inv_d;
    dx.row(i) = cache.inv_std[i] *
                (dxhat.row(i).array() - mean_dxhat - xhat.row(i).array() * mean_dxhat_xhat);
  }
  return dx;
}

// tanh approximation of GELU
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  });
}

inline Mat gelu_backward(const Mat& dy, const Mat& x) {
  Mat dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double u = kGeluC * (v + kGeluA * v * v * v);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    dx.data()[i] = dy.data()[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
  }
  return dx;
}

/// Numerically stable softmax over a vector.
inline Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

/// Additive attention mask: 0 where row i may attend to column j, -inf
/// elsewhere. The first `prefix` positions form an unordered block that
/// sees only itself; the rest is split into consecutive segments, each of
/// which sees the prefix plus its own earlier positions.
inline Mat segment_mask(Eigen::Index prefix, std::span<const Eigen::Index> segment_lengths) {
  Eigen::Index n = prefix;
  for (Eigen::Index len : segment_lengths) n += len;
  Mat m = Mat::Constant(n, n, -std::numeric_limits<double>::infinity());
  m.topLeftCorner(prefix, prefix).setZero();
  Eigen::Index start = prefix;
  for (Eigen::Index len : segment_lengths) {
    for (Eigen::Index i = 0; i < len; ++i) {
      m.block(start + i, 0, 1, prefix).setZero();
      m.block(start + i, start, 1, i + 1).setZero();
    }
    start += len;
  }
  return m;
}

struct AttentionWeights {
  const Mat* wq;
  const Mat* wk;
  const Mat* wv;
  const Mat* wo;
  const Vec* bo;
};

struct AttentionCache {
  Mat input;               // normalized input (n x d)
  Mat q, k, v;             // (n x d)
  std::vector<Mat> probs;  // per head (n x n)
  Mat concat;              // (n x d) before output projection
};

/// Multi-head self-attention. `mask` is an additive (n x n) mask as built
/// by segment_mask(); null means every position sees every other.
inline Mat attention(const Mat& x, const AttentionWeights& w, int heads, const Mat* mask,
                     AttentionCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat q = x * *w.wq;
  Mat k = x * *w.wk;
  Mat v = x * *w.wv;
  Mat concat(n, d);
  std::vector<Mat> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    Mat s = (qh * kh.transpose()) * scale;
    if (mask) s += *mask;
    const Vec row_max = s.rowwise().maxCoeff();
    s = (s.colwise() - row_max).array().exp();
    const Vec z = s.rowwise().sum();
    s.array().colwise() /= z.array();
    concat.middleCols(h * dh, dh) = s * vh;
    if (cache) probs.push_back(std::move(s));
  }
  Mat out = (concat * *w.wo).rowwise() + w.bo->transpose();
  if (cache) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return out;
}

struct AttentionGrads {
  Mat* wq;
  Mat* wk;
  Mat* wv;
  Mat* wo;
  Vec* bo;
};

/// Backward of attention(); accumulates weight grads when `g` is non-null
/// and returns the gradient w.r.t. the normalized input.
inline Mat attention_backward(const Mat& dout, const AttentionWeights& w, int heads,
                              const AttentionCache& c, const AttentionGrads* g) {
  const Eigen::Index d = dout.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (g) {
    *g->wo += c.concat.transpose() * dout;
    *g->bo += dout.colwise().sum().transpose();
  }
  const Mat dconcat = dout * w.wo->transpose();
  Mat dq(dout.rows(), d), dk(dout.rows(), d), dv(dout.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Mat& p = c.probs[static_cast<std::size_t>(h)];
    const auto doh = dconcat.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh) = p.transpose() * doh;
    const Mat dp = doh * c.v.middleCols(h * dh, dh).transpose();
    const Vec row_dot = (dp.array() * p.array()).rowwise().sum();
    const Mat ds = (p.array() * (dp.array().colwise() - row_dot.array())).matrix() * scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  if (g) {
    *g->wq += c.input.transpose() * dq;
    *g->wk += c.input.transpose() * dk;
    *g->wv += c.input.transpose() * dv;
  }
  return dq * w.wq->transpose() + dk * w.wk->transpose() + dv * w.wv->transpose();
}

/// N(0, std^2) matrix from the project RNG.
inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = stddev * rng.normal();
  return m;
}

}  // namespace mgtok::nn
