#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smprompt/lm/backend.hpp"

namespace smprompt::lm {

struct TinyMlmConfig {
  std::size_t vocab_size = 0;
  int dim = 32;        // d, 16..128
  int layers = 1;      // P, 1..4
  int ff_dim = 64;
  std::size_t max_length = 64;
  std::uint64_t seed = 1;
  double init_std = 0.1;  // 0 gives an all-zero model

  void validate() const;
  bool operator==(const TinyMlmConfig&) const = default;
};

struct EncoderLayerParams {
  Eigen::MatrixXd wq, wk, wv, wo;  // d x d
  Eigen::VectorXd bq, bk, bv, bo;
  Eigen::MatrixXd w1;  // d x ff
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // ff x d
  Eigen::VectorXd b2;

  template <typename F>
  void visit(const std::string& prefix, F&& f) { visit_all(*this, prefix, f); }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const { visit_all(*this, prefix, f); }

 private:
  template <typename Self, typename F>
  static void visit_all(Self& s, const std::string& prefix, F& f) {
    f(prefix + "wq", s.wq); f(prefix + "bq", s.bq);
    f(prefix + "wk", s.wk); f(prefix + "bk", s.bk);
    f(prefix + "wv", s.wv); f(prefix + "bv", s.bv);
    f(prefix + "wo", s.wo); f(prefix + "bo", s.bo);
    f(prefix + "w1", s.w1); f(prefix + "b1", s.b1);
    f(prefix + "w2", s.w2); f(prefix + "b2", s.b2);
  }
};

/// Every trainable tensor. token_embedding doubles as the output projection
/// (logits = token_embedding * h + output_bias).
struct TinyMlmParams {
  Eigen::MatrixXd token_embedding;     // V x d
  Eigen::MatrixXd position_embedding;  // L x d
  std::vector<EncoderLayerParams> layers;
  Eigen::VectorXd output_bias;  // V

  static TinyMlmParams zeros(const TinyMlmConfig& config);

  /// Calls f(name, tensor) for every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) { visit_all(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_all(*this, f); }

  std::vector<std::span<double>> spans();
  std::vector<std::span<const double>> spans() const;
  std::size_t count() const;

 private:
  template <typename Self, typename F>
  static void visit_all(Self& s, F& f) {
    f(std::string("token_embedding"), s.token_embedding);
    f(std::string("position_embedding"), s.position_embedding);
    for (std::size_t i = 0; i < s.layers.size(); ++i)
      s.layers[i].visit("layer" + std::to_string(i) + ".", f);
    f(std::string("output_bias"), s.output_bias);
  }
};

/// A small bidirectional transformer encoder: token + position embeddings,
/// P residual blocks of single-head self-attention and a GELU feed-forward
/// layer, and a projection tied to the token embeddings.
class TinyMlm final : public LmBackend {
 public:
  explicit TinyMlm(TinyMlmConfig config);
  TinyMlm(TinyMlmConfig config, TinyMlmParams params);

  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t max_length() const override { return config_.max_length; }
  std::string name() const override { return "tiny"; }
  std::string fingerprint() const override;

  MaskLogits score(const RenderedInput& input) const override;
  bool trainable() const override { return true; }
  double train_step(const std::vector<RenderedInput>& batch, const LossFn& loss,
                    Optimizer& optimizer) override;
  std::unique_ptr<LmBackend> clone() const override;

  /// Final hidden state of every position (n x d).
  Eigen::MatrixXd encode(const std::vector<TokenId>& ids) const;

  /// Accumulates dL/dparams into `grads` given dL/d(mask logits) for one
  /// input; returns the logits the gradient refers to.
  MaskLogits backward(const RenderedInput& input, const MaskLogits& d_logits,
                      TinyMlmParams& grads) const;

  const TinyMlmConfig& config() const { return config_; }
  const TinyMlmParams& params() const { return params_; }
  TinyMlmParams& params() { return params_; }

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static TinyMlm load(std::istream& in);
  static TinyMlm load(const std::filesystem::path& path);

 private:
  struct LayerCache;
  struct Cache;
  Cache forward(const std::vector<TokenId>& ids) const;
  MaskLogits mask_logits(const Cache& cache, const RenderedInput& input) const;
  void backward(const Cache& cache, const RenderedInput& input, const MaskLogits& d_logits,
                TinyMlmParams& grads) const;

  TinyMlmConfig config_;
  TinyMlmParams params_;
};

double gelu(double x);
double gelu_derivative(double x);

}  // namespace smprompt::lm
