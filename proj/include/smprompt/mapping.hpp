#pragma once

// Label verbalizers over mask-position logits.
//
// A LabelMapping assigns every label t a list of vocabulary tokens
// v_t^1..v_t^n. With a MappingHead (weights M_t, bias b_t) the label score is
//
//     score(t) = M_t . g_t + b_t,   g_t = (h[v_t^1], ..., h[v_t^n])
//
// where h are the mask logits, and p = softmax(score). A single-token mapping
// with M_t = [1], b_t = 0 reduces to a softmax over the mapping-token logits.
// An ensemble averages the member distributions; training averages the
// per-member cross entropy.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smprompt/error.hpp"
#include "smprompt/tokenizer.hpp"

namespace smprompt {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MaskLogits = Vec<double>;

/// Probabilities below this are clamped before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

struct LabelMapping {
  std::string name;
  std::vector<std::vector<TokenId>> tokens;  // per label

  std::size_t labels() const { return tokens.size(); }
  bool single_token() const {
    for (const auto& t : tokens)
      if (t.size() != 1) return false;
    return true;
  }
};

/// Builds a mapping from label words. A word that splits into several pieces
/// is represented by its first piece and reported in `warnings`; a word that
/// is not in the vocabulary is an error.
inline LabelMapping make_mapping(std::string name,
                                 const std::vector<std::vector<std::string>>& words,
                                 const Tokenizer& tokenizer,
                                 std::vector<std::string>* warnings = nullptr) {
  LabelMapping m{std::move(name), {}};
  for (std::size_t t = 0; t < words.size(); ++t) {
    if (words[t].empty())
      throw ValidationError("mapping '" + m.name + "' has no tokens for label " + std::to_string(t));
    std::vector<TokenId> ids;
    for (const auto& w : words[t]) {
      auto pieces = tokenizer.encode(w);
      if (pieces.empty()) throw ValidationError("empty label word in mapping '" + m.name + "'");
      if (pieces.size() > 1 && warnings)
        warnings->push_back("label word '" + w + "' splits into " + std::to_string(pieces.size()) +
                            " pieces; using the first");
      if (pieces.front() == Tokenizer::kUnk)
        throw ValidationError("label word '" + w + "' of mapping '" + m.name +
                              "' is not in the vocabulary");
      ids.push_back(pieces.front());
    }
    m.tokens.push_back(std::move(ids));
  }
  return m;
}

template <typename Scalar = double>
struct MappingHead {
  std::vector<Vec<Scalar>> weights;  // label t -> length n_t
  Vec<Scalar> bias;                  // one per label

  /// Unit weights, zero bias: the head under which predict_weighted
  /// coincides with predict_single for single-token mappings.
  static MappingHead identity(const LabelMapping& mapping) {
    MappingHead h;
    for (const auto& t : mapping.tokens) h.weights.push_back(Vec<Scalar>::Ones(static_cast<Eigen::Index>(t.size())));
    h.bias = Vec<Scalar>::Zero(static_cast<Eigen::Index>(mapping.labels()));
    return h;
  }
  static MappingHead zeros_like(const MappingHead& other) {
    MappingHead h;
    for (const auto& w : other.weights) h.weights.push_back(Vec<Scalar>::Zero(w.size()));
    h.bias = Vec<Scalar>::Zero(other.bias.size());
    return h;
  }
};

/// Xavier-normal weights, fan_in = n_t, fan_out = 1: each M_t entry is drawn
/// from N(0, 2 / (n_t + 1)). Biases start at zero.
template <typename Scalar = double>
MappingHead<Scalar> init_head(const LabelMapping& mapping, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  MappingHead<Scalar> h;
  for (const auto& t : mapping.tokens) {
    const auto n = static_cast<Eigen::Index>(t.size());
    std::normal_distribution<Scalar> dist(Scalar(0), std::sqrt(Scalar(2) / Scalar(n + 1)));
    Vec<Scalar> w(n);
    for (Eigen::Index j = 0; j < n; ++j) w(j) = dist(engine);
    h.weights.push_back(std::move(w));
  }
  h.bias = Vec<Scalar>::Zero(static_cast<Eigen::Index>(mapping.labels()));
  return h;
}

template <typename Scalar = double>
struct MappingEnsemble {
  std::vector<LabelMapping> mappings;
  std::vector<MappingHead<Scalar>> heads;  // one per mapping, or one shared

  std::size_t members() const { return mappings.size(); }
  bool shared() const { return heads.size() == 1 && mappings.size() > 1; }
  const MappingHead<Scalar>& head(std::size_t member) const {
    return heads[shared() ? 0 : member];
  }
  MappingHead<Scalar>& head(std::size_t member) { return heads[shared() ? 0 : member]; }
};

/// Separate Xavier heads, member b seeded with seed + b. With `shared`, a
/// single head serves every member, which requires identical shapes.
template <typename Scalar = double>
MappingEnsemble<Scalar> make_ensemble(std::vector<LabelMapping> mappings, std::uint64_t seed,
                                      bool shared = false) {
  if (mappings.empty()) throw ValidationError("an ensemble needs at least one mapping");
  for (const auto& m : mappings) {
    if (m.labels() != mappings.front().labels())
      throw ValidationError("ensemble members disagree on the number of labels");
    if (shared)
      for (std::size_t t = 0; t < m.labels(); ++t)
        if (m.tokens[t].size() != mappings.front().tokens[t].size())
          throw ValidationError("a shared head needs every mapping to have the same shape");
  }
  MappingEnsemble<Scalar> e;
  const std::size_t heads = shared ? 1 : mappings.size();
  for (std::size_t b = 0; b < heads; ++b) e.heads.push_back(init_head<Scalar>(mappings[b], seed + b));
  e.mappings = std::move(mappings);
  return e;
}

namespace detail {

template <typename Derived>
void check_logits(const Eigen::MatrixBase<Derived>& logits) {
  if (!logits.allFinite()) throw ValidationError("mask logits contain non-finite values");
}

template <typename Derived>
void check_ids(const Eigen::MatrixBase<Derived>& logits, const LabelMapping& mapping) {
  for (const auto& t : mapping.tokens)
    for (auto id : t)
      if (id < 0 || id >= logits.size())
        throw ValidationError("mapping '" + mapping.name + "' token id " + std::to_string(id) +
                              " outside a vocabulary of " + std::to_string(logits.size()));
}

}  // namespace detail

/// Max-subtracted softmax.
template <typename Derived>
Vec<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& scores) {
  using Scalar = typename Derived::Scalar;
  Vec<Scalar> e = (scores.array() - scores.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// The mapping-token logits of label t.
template <typename Derived>
Vec<typename Derived::Scalar> gather(const Eigen::MatrixBase<Derived>& logits,
                                     const std::vector<TokenId>& ids) {
  Vec<typename Derived::Scalar> g(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) g(static_cast<Eigen::Index>(j)) = logits(ids[j]);
  return g;
}

template <typename Derived>
Vec<typename Derived::Scalar> predict_single(const Eigen::MatrixBase<Derived>& logits,
                                             const LabelMapping& mapping) {
  if (!mapping.single_token())
    throw ValidationError("predict_single needs one token per label; mapping '" + mapping.name +
                          "' has more");
  detail::check_logits(logits);
  detail::check_ids(logits, mapping);
  Vec<typename Derived::Scalar> h(static_cast<Eigen::Index>(mapping.labels()));
  for (std::size_t t = 0; t < mapping.labels(); ++t)
    h(static_cast<Eigen::Index>(t)) = logits(mapping.tokens[t][0]);
  return softmax(h);
}

template <typename Derived, typename Scalar = typename Derived::Scalar>
Vec<Scalar> label_scores(const Eigen::MatrixBase<Derived>& logits, const LabelMapping& mapping,
                         const MappingHead<Scalar>& head) {
  if (head.weights.size() != mapping.labels() ||
      head.bias.size() != static_cast<Eigen::Index>(mapping.labels()))
    throw ValidationError("head shape does not match mapping '" + mapping.name + "'");
  detail::check_ids(logits, mapping);
  Vec<Scalar> s(static_cast<Eigen::Index>(mapping.labels()));
  for (std::size_t t = 0; t < mapping.labels(); ++t) {
    const auto& w = head.weights[t];
    if (w.size() != static_cast<Eigen::Index>(mapping.tokens[t].size()))
      throw ValidationError("head weights for label " + std::to_string(t) +
                            " do not match the mapping");
    s(static_cast<Eigen::Index>(t)) =
        w.dot(gather(logits, mapping.tokens[t])) + head.bias(static_cast<Eigen::Index>(t));
  }
  return s;
}

template <typename Derived, typename Scalar = typename Derived::Scalar>
Vec<Scalar> predict_weighted(const Eigen::MatrixBase<Derived>& logits, const LabelMapping& mapping,
                             const MappingHead<Scalar>& head) {
  detail::check_logits(logits);
  return softmax(label_scores(logits, mapping, head));
}

namespace detail {
// Accumulator for member averages: wide enough that summing a few identical
// distributions and dividing back is exact.
template <typename Scalar>
struct Wider {
  using type = Scalar;
};
template <>
struct Wider<float> {
  using type = double;
};
template <>
struct Wider<double> {
  using type = long double;
};
}  // namespace detail

template <typename Derived, typename Scalar = typename Derived::Scalar>
Vec<Scalar> predict_ensemble(const Eigen::MatrixBase<Derived>& logits,
                             const MappingEnsemble<Scalar>& ensemble) {
  using Acc = typename detail::Wider<Scalar>::type;
  if (ensemble.members() == 0) throw ValidationError("empty ensemble");
  Vec<Acc> sum = Vec<Acc>::Zero(static_cast<Eigen::Index>(ensemble.mappings[0].labels()));
  for (std::size_t b = 0; b < ensemble.members(); ++b)
    sum += predict_weighted(logits, ensemble.mappings[b], ensemble.head(b)).template cast<Acc>();
  return (sum / static_cast<Acc>(ensemble.members())).template cast<Scalar>();
}

/// Mean of already-computed member distributions (joint inference across
/// separately trained configurations).
template <typename Scalar>
Vec<Scalar> average_distributions(const std::vector<Vec<Scalar>>& members) {
  using Acc = typename detail::Wider<Scalar>::type;
  if (members.empty()) throw ValidationError("no distributions to average");
  Vec<Acc> sum = Vec<Acc>::Zero(members[0].size());
  for (const auto& p : members) {
    if (p.size() != members[0].size()) throw ValidationError("distributions differ in length");
    sum += p.template cast<Acc>();
  }
  return (sum / static_cast<Acc>(members.size())).template cast<Scalar>();
}

template <typename Scalar = double>
struct LossValue {
  Scalar value = 0;
  std::size_t floored = 0;  // terms whose probability hit kProbabilityFloor
};

/// Mean over the batch of -log p(gold).
template <typename Scalar>
LossValue<Scalar> loss(const std::vector<Vec<Scalar>>& predictions, const std::vector<int>& gold) {
  if (predictions.empty()) throw ValidationError("loss of an empty batch");
  if (predictions.size() != gold.size()) throw ValidationError("predictions and labels differ in length");
  LossValue<Scalar> out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    Scalar p = predictions[i](gold[i]);
    if (p < Scalar(kProbabilityFloor)) {
      p = Scalar(kProbabilityFloor);
      ++out.floored;
    }
    out.value -= std::log(p);
  }
  out.value /= static_cast<Scalar>(predictions.size());
  return out;
}

/// Mean over batch and members of -log p_member(gold).
template <typename Scalar>
LossValue<Scalar> ensemble_loss(const std::vector<Vec<Scalar>>& logits,
                                const MappingEnsemble<Scalar>& ensemble,
                                const std::vector<int>& gold) {
  LossValue<Scalar> out;
  for (std::size_t b = 0; b < ensemble.members(); ++b) {
    std::vector<Vec<Scalar>> preds;
    preds.reserve(logits.size());
    for (const auto& h : logits)
      preds.push_back(predict_weighted(h, ensemble.mappings[b], ensemble.head(b)));
    auto l = loss(preds, gold);
    out.value += l.value;
    out.floored += l.floored;
  }
  out.value /= static_cast<Scalar>(ensemble.members());
  return out;
}

template <typename Scalar = double>
struct HeadGradients {
  MappingHead<Scalar> head;          // dL/dM, dL/db
  std::vector<Vec<Scalar>> logits;   // dL/dh per example (sparse in practice)
};

/// Adds the gradient of weight * -log p(gold) for one example into d_head and
/// d_logits. dL/dscore(t) = p(t) - [t == gold], chained through the dot
/// products.
template <typename Scalar>
void accumulate_example_gradients(const Vec<Scalar>& logits, const LabelMapping& mapping,
                                  const MappingHead<Scalar>& head, int gold, Scalar weight,
                                  MappingHead<Scalar>& d_head, Vec<Scalar>& d_logits) {
  Vec<Scalar> delta = predict_weighted(logits, mapping, head);
  delta(gold) -= Scalar(1);
  delta *= weight;
  for (std::size_t t = 0; t < mapping.labels(); ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    const auto& ids = mapping.tokens[t];
    d_head.weights[t] += delta(ti) * gather(logits, ids);
    d_head.bias(ti) += delta(ti);
    for (std::size_t j = 0; j < ids.size(); ++j)
      d_logits(ids[j]) += delta(ti) * head.weights[t](static_cast<Eigen::Index>(j));
  }
}

/// Exact gradients of the mean cross-entropy loss for one mapping and head.
template <typename Scalar>
HeadGradients<Scalar> head_gradients(const std::vector<Vec<Scalar>>& logits,
                                     const LabelMapping& mapping, const MappingHead<Scalar>& head,
                                     const std::vector<int>& gold) {
  if (logits.empty() || logits.size() != gold.size())
    throw ValidationError("head_gradients needs a non-empty batch with one label per example");
  HeadGradients<Scalar> g{MappingHead<Scalar>::zeros_like(head), {}};
  const Scalar w = Scalar(1) / static_cast<Scalar>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    g.logits.push_back(Vec<Scalar>::Zero(logits[i].size()));
    accumulate_example_gradients(logits[i], mapping, head, gold[i], w, g.head, g.logits.back());
  }
  return g;
}

template <typename Scalar = double>
struct EnsembleGradients {
  std::vector<MappingHead<Scalar>> heads;  // parallel to ensemble.heads
  std::vector<Vec<Scalar>> logits;
};

/// Exact gradients of ensemble_loss. Shared heads accumulate every member's
/// contribution.
template <typename Scalar>
EnsembleGradients<Scalar> ensemble_gradients(const std::vector<Vec<Scalar>>& logits,
                                             const MappingEnsemble<Scalar>& ensemble,
                                             const std::vector<int>& gold) {
  if (logits.empty() || logits.size() != gold.size())
    throw ValidationError("ensemble_gradients needs a non-empty batch with one label per example");
  EnsembleGradients<Scalar> g;
  for (const auto& h : ensemble.heads) g.heads.push_back(MappingHead<Scalar>::zeros_like(h));
  const Scalar w =
      Scalar(1) / static_cast<Scalar>(logits.size() * ensemble.members());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    g.logits.push_back(Vec<Scalar>::Zero(logits[i].size()));
    for (std::size_t b = 0; b < ensemble.members(); ++b)
      accumulate_example_gradients(logits[i], ensemble.mappings[b], ensemble.head(b), gold[i], w,
                                   g.heads[ensemble.shared() ? 0 : b], g.logits.back());
  }
  return g;
}

}  // namespace smprompt
