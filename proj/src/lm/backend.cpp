#include "smprompt/lm/backend.hpp"

#include <algorithm>
#include <cmath>

#include "smprompt/error.hpp"

namespace smprompt::lm {

void Optimizer::step(const std::vector<std::span<double>>& params,
                     const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) throw ValidationError("optimizer: parameter/gradient mismatch");
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerConfig::Kind::Sgd) {
    for (std::size_t b = 0; b < params.size(); ++b)
      for (std::size_t i = 0; i < params[b].size(); ++i) params[b][i] -= lr * grads[b][i];
    return;
  }

  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ValidationError("optimizer: parameter list changed shape");
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = m_[b];
    auto& v = v_[b];
    if (m.size() != params[b].size() || grads[b].size() != params[b].size())
      throw ValidationError("optimizer: parameter block changed size");
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      params[b][i] -= lr * (update + config_.weight_decay * params[b][i]);
    }
  }
}

double LmBackend::train_step(const std::vector<RenderedInput>&, const LossFn&, Optimizer&) {
  throw UnsupportedOperation("backend '" + name() + "' cannot be trained");
}

void LmBackend::validate(const RenderedInput& input) const {
  if (input.ids.size() > max_length())
    throw ValidationError("input of " + std::to_string(input.ids.size()) +
                          " tokens exceeds the backend maximum of " + std::to_string(max_length()));
  const auto masks = std::count(input.ids.begin(), input.ids.end(), mask_id());
  if (masks != 1)
    throw ValidationError("input has " + std::to_string(masks) + " mask tokens, expected 1");
  if (input.mask_position >= input.ids.size() || input.ids[input.mask_position] != mask_id())
    throw ValidationError("mask position does not point at the mask token");
}

}  // namespace smprompt::lm
