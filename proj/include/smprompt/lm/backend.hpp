#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "smprompt/mapping.hpp"
#include "smprompt/template.hpp"

namespace smprompt::lm {

struct OptimizerConfig {
  enum class Kind { Sgd, AdamW };
  Kind kind = Kind::AdamW;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// Plain gradient descent or AdamW over a fixed list of parameter blocks.
/// The block list must keep the same order and sizes between steps.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<const double>>& grads);
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_, v_;
  long steps_ = 0;
};

/// Loss and dL/d(mask logits) for each example of a batch.
struct LossAndGrad {
  double loss = 0;
  std::vector<MaskLogits> d_logits;
};
using LossFn = std::function<LossAndGrad(const std::vector<MaskLogits>&)>;

/// A masked language model read at the mask position: score() returns the
/// vocabulary logits W . h_[mask].
class LmBackend {
 public:
  virtual ~LmBackend() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_length() const = 0;
  virtual TokenId mask_id() const { return Tokenizer::kMask; }
  virtual std::string name() const = 0;
  /// Identifies the backend's configuration and parameters for report
  /// hashing.
  virtual std::string fingerprint() const = 0;

  virtual MaskLogits score(const RenderedInput& input) const = 0;

  virtual bool trainable() const { return false; }
  /// One optimisation step on the backbone. `loss` receives the batch's
  /// mask logits and returns the loss with its logit gradients; the
  /// backend backpropagates them and updates its parameters. Returns the
  /// loss value.
  virtual double train_step(const std::vector<RenderedInput>& batch, const LossFn& loss,
                            Optimizer& optimizer);

  /// Independent copy for a run that will train it.
  virtual std::unique_ptr<LmBackend> clone() const = 0;

 protected:
  /// Shared input checks: length within max_length(), exactly one mask, at
  /// the recorded position.
  void validate(const RenderedInput& input) const;
};

}  // namespace smprompt::lm
