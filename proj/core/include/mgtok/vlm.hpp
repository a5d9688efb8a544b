#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mgtok/numerics.hpp"
#include "mgtok/params.hpp"
#include "mgtok/token_pipeline.hpp"

namespace mgtok {

/// Reserved ids at the start of every vocabulary.
namespace special {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int sep = 2;
inline constexpr int eos = 3;
inline constexpr int count = 4;
}  // namespace special

struct ProjectorConfig {
  int in_dim = 32;
  int hidden_dim = 64;
  int out_dim = 64;
  std::uint64_t seed = 7;
};

/// Two affine layers with GELU between them, applied to each token.
class Projector {
 public:
  struct Cache {
    Mat input;
    Mat pre;     // before GELU
    Mat hidden;  // after GELU
  };

  Projector() = default;
  explicit Projector(const ProjectorConfig& config);

  /// Square projector that reproduces its input: the first layer shifts by
  /// `offset` into GELU's linear regime and the second layer shifts back.
  static Projector identity(int dim, double offset = 30.0);

  const ProjectorConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Mat forward(const Mat& tokens, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients into `grads` (if non-null); returns dL/dinput.
  Mat backward(const Mat& d_out, const Cache& cache, ParamStore* grads) const;

 private:
  enum : std::size_t { kW1, kB1, kW2, kB2 };
  ProjectorConfig config_;
  ParamStore params_;
};

struct DecoderConfig {
  int vocab_size = 40;
  int model_dim = 64;
  int layers = 2;
  int heads = 4;
  int ff_dim = 128;
  /// Maximum visual + text length.
  int context = 256;
  std::uint64_t seed = 11;

  void validate() const;
};

/// Small pre-norm transformer decoder. Visual tokens form an unordered
/// prefix (bidirectional among themselves, no positional code); text tokens
/// get learned positions and attend causally to everything before them.
class ToyDecoder {
 public:
  ToyDecoder() = default;
  explicit ToyDecoder(const DecoderConfig& config);

  const DecoderConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Logits (text_len x vocab) at every text position.
  Mat logits(const Mat& visual, std::span<const int> text) const;

  /// Mean cross-entropy of predicting text[t] from position t-1 for every
  /// t >= first_target. Fills parameter and visual-input gradients when the
  /// corresponding pointers are non-null.
  double loss(const Mat& visual, std::span<const int> text, std::size_t first_target,
              ParamStore* grads = nullptr, Mat* d_visual = nullptr) const;

  /// Several texts after one shared visual prefix. Each text attends to the
  /// prefix and its own earlier tokens only, and positions restart per text,
  /// so results equal separate calls: logits_shared()[i] == logits(visual,
  /// texts[i]) and loss_shared() == sum of loss() over the texts. The prefix
  /// is computed once.
  std::vector<Mat> logits_shared(const Mat& visual, std::span<const std::vector<int>> texts) const;
  double loss_shared(const Mat& visual, std::span<const std::vector<int>> texts,
                     std::span<const std::size_t> first_targets, ParamStore* grads = nullptr,
                     Mat* d_visual = nullptr) const;

 private:
  struct LayerIndex {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct LayerCache;
  void check_inputs(const Mat& visual, std::span<const std::vector<int>> texts) const;
  /// Residual stream after the last block: visual rows, then each text.
  Mat forward_hidden(const Mat& visual, std::span<const std::vector<int>> texts,
                     std::vector<LayerCache>* caches) const;

  DecoderConfig config_;
  ParamStore params_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_out_ = 0, b_out_ = 0;
  std::vector<LayerIndex> layers_;
};

struct VlmModel {
  Projector projector;
  ToyDecoder decoder;
};

/// [bos] question [sep] answer
std::vector<int> build_text(std::span<const int> question, std::span<const int> answer);

/// Per-token projection of a bundle's embeddings, order preserved.
Mat project(const Projector& projector, const TokenBundle& bundle);

/// Mean answer-token cross-entropy given projected visual tokens.
double forward_loss(const ToyDecoder& decoder, const Mat& visual, std::span<const int> question,
                    std::span<const int> answer);

/// Greedy decoding; stops at eos (not included) or after max_len tokens.
/// If `allowed` is non-empty, the argmax is restricted to those ids.
std::vector<int> generate(const ToyDecoder& decoder, const Mat& visual,
                          std::span<const int> question, std::size_t max_len,
                          std::span<const int> allowed = {});

}  // namespace mgtok
