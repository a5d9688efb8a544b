#include "mgtok/vision_encoder.hpp"

#include <cmath>
#include <cstring>

#include "mgtok/binary_io.hpp"
#include "nn_ops.hpp"

namespace mgtok {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::config, "encoder config: " + m); };
  if (image_side <= 0 || patch_size <= 0) fail("image_side and patch_size must be positive");
  if (image_side % patch_size != 0) fail("patch_size must divide image_side");
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
    fail("embed_dim must be a positive multiple of heads");
  if (embed_dim % 4 != 0) fail("embed_dim must be divisible by 4 for 2-D sinusoids");
  if (layers < 1) fail("need at least one transformer block");
}

Mat sincos_position_table(int side, int dim) {
  const int half = dim / 2;
  const int pairs = half / 2;
  Mat table(side * side, dim);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const int row = r * side + c;
      for (int k = 0; k < pairs; ++k) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / pairs);
        table(row, k) = std::sin(r * omega);
        table(row, pairs + k) = std::cos(r * omega);
        table(row, half + k) = std::sin(c * omega);
        table(row, half + pairs + k) = std::cos(c * omega);
      }
    }
  }
  return table;
}

VisionEncoder::VisionEncoder(const EncoderConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const int d = config_.embed_dim;
  const int patch_in = config_.patch_size * config_.patch_size * 3;
  patch_proj_ = nn::random_matrix(patch_in, d, 1.0 / std::sqrt(patch_in), rng);
  patch_bias_ = Vec::Zero(d);
  cls_token_ = nn::random_matrix(d, 1, 1.0, rng);
  position_ = sincos_position_table(config_.grid_side(), d);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_ff = 1.0 / std::sqrt(4.0 * d);
  for (int l = 0; l < config_.layers; ++l) {
    Block b;
    b.ln1_gain = Vec::Ones(d);
    b.ln1_bias = Vec::Zero(d);
    b.wq = nn::random_matrix(d, d, s, rng);
    b.wk = nn::random_matrix(d, d, s, rng);
    b.wv = nn::random_matrix(d, d, s, rng);
    b.wo = nn::random_matrix(d, d, s, rng);
    b.bo = Vec::Zero(d);
    b.ln2_gain = Vec::Ones(d);
    b.ln2_bias = Vec::Zero(d);
    b.w1 = nn::random_matrix(d, 4 * d, s, rng);
    b.b1 = Vec::Zero(4 * d);
    b.w2 = nn::random_matrix(4 * d, d, s_ff, rng);
    b.b2 = Vec::Zero(d);
    blocks_.push_back(std::move(b));
  }
  final_gain_ = Vec::Ones(d);
  final_bias_ = Vec::Zero(d);
}

ImageFeatureSet VisionEncoder::encode(const Image& pixels) const {
  const int side = config_.image_side;
  if (pixels.rows() != static_cast<std::size_t>(side) ||
      pixels.cols() != static_cast<std::size_t>(side)) {
    throw_shape("image is " + std::to_string(pixels.rows()) + "x" + std::to_string(pixels.cols()) +
                ", encoder expects " + std::to_string(side));
  }
  const int p = config_.patch_size;
  const int grid = config_.grid_side();
  const int n_patch = grid * grid;
  const int d = config_.embed_dim;

  // Flattened patches, pixels mapped from [0,1] to [-1,1].
  Mat flat(n_patch, p * p * 3);
  for (int gr = 0; gr < grid; ++gr) {
    for (int gc = 0; gc < grid; ++gc) {
      const int row = gr * grid + gc;
      int col = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int ch = 0; ch < 3; ++ch)
            flat(row, col++) = 2.0 * pixels(gr * p + y, gc * p + x)[ch] - 1.0;
    }
  }

  Mat x(n_patch + 1, d);
  x.row(0) = cls_token_.transpose();
  x.bottomRows(n_patch) = ((flat * patch_proj_).rowwise() + patch_bias_.transpose()) + position_;

  for (const Block& b : blocks_) {
    const Mat h = nn::layer_norm(x, b.ln1_gain, b.ln1_bias, nullptr);
    x += nn::attention(h, {&b.wq, &b.wk, &b.wv, &b.wo, &b.bo}, config_.heads, nullptr, nullptr);
    const Mat h2 = nn::layer_norm(x, b.ln2_gain, b.ln2_bias, nullptr);
    const Mat hidden = nn::gelu((h2 * b.w1).rowwise() + b.b1.transpose());
    x += (hidden * b.w2).rowwise() + b.b2.transpose();
  }
  const Mat out = nn::layer_norm(x, final_gain_, final_bias_, nullptr);
  const Mat keys = out.bottomRows(n_patch) * blocks_.back().wk;

  ImageFeatureSet f;
  f.config = config_;
  f.cls = out.row(0).transpose();
  f.patches = VecGrid(grid, grid);
  f.keys = VecGrid(grid, grid);
  for (int i = 0; i < n_patch; ++i) {
    f.patches[i] = out.row(i + 1).transpose();
    f.keys[i] = keys.row(i).transpose();
  }
  f.key_matrix = keys;
  return f;
}

std::uint32_t VisionEncoder::weights_checksum() const {
  ByteWriter w;
  auto put = [&w](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
  };
  put(patch_proj_);
  put(patch_bias_);
  put(cls_token_);
  put(position_);
  for (const Block& b : blocks_) {
    put(b.ln1_gain), put(b.ln1_bias), put(b.wq), put(b.wk), put(b.wv), put(b.wo), put(b.bo);
    put(b.ln2_gain), put(b.ln2_bias), put(b.w1), put(b.b1), put(b.w2), put(b.b2);
  }
  put(final_gain_);
  put(final_bias_);
  return crc32(w.buffer());
}

ImageFeatureSet encode_image(const Image& pixels, const EncoderConfig& config) {
  return VisionEncoder(config).encode(pixels);
}

namespace {

void check_query(const ImageFeatureSet& features, const Vec& query) {
  if (query.size() != features.key_matrix.cols()) {
    throw_shape("query dimension " + std::to_string(query.size()) + " != key dimension " +
                std::to_string(features.key_matrix.cols()));
  }
}

}  // namespace

ExplainabilityMap explain(const ImageFeatureSet& features, const Vec& query) {
  check_query(features, query);
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
  const Vec w = nn::softmax(features.key_matrix * query * scale);
  const auto side = features.keys.rows();
  return {ScalarGrid(side, side, std::vector<double>(w.data(), w.data() + w.size())), query};
}

Vec explain_backward(const ImageFeatureSet& features, const Vec& query,
                     const ScalarGrid& upstream_grad) {
  check_query(features, query);
  if (upstream_grad.size() != static_cast<std::size_t>(features.key_matrix.rows())) {
    throw_shape("upstream gradient has " + std::to_string(upstream_grad.size()) +
                " entries, map has " + std::to_string(features.key_matrix.rows()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
  const Vec w = nn::softmax(features.key_matrix * query * scale);
  const Eigen::Map<const Vec> g(upstream_grad.values().data(),
                                static_cast<Eigen::Index>(upstream_grad.size()));
  // Softmax Jacobian-vector product, then chain through the logits.
  const Vec dlogits = w.cwiseProduct(g.array().matrix() - Vec::Constant(w.size(), w.dot(g)));
  return features.key_matrix.transpose() * dlogits * scale;
}

}  // namespace mgtok
