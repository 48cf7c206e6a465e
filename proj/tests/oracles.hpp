#pragma once

// Reference computations written with plain loops over std::vector, sharing
// no code with the library, for cross-checking it.

#include <cmath>
#include <vector>

#include "smprompt/lm/tiny_mlm.hpp"
#include "smprompt/mapping.hpp"

namespace oracle {

using Vector = std::vector<double>;

inline Vector softmax(const Vector& s) {
  double m = s[0];
  for (double v : s) m = v > m ? v : m;
  Vector e(s.size());
  double z = 0;
  for (std::size_t i = 0; i < s.size(); ++i) z += e[i] = std::exp(s[i] - m);
  for (auto& v : e) v /= z;
  return e;
}

/// score(t) = sum_j M_t[j] * h[v_t^j] + b_t, then softmax.
inline Vector weighted(const smprompt::MaskLogits& h, const smprompt::LabelMapping& mapping,
                       const smprompt::MappingHead<double>& head) {
  Vector s(mapping.labels());
  for (std::size_t t = 0; t < mapping.labels(); ++t) {
    double acc = head.bias(static_cast<Eigen::Index>(t));
    for (std::size_t j = 0; j < mapping.tokens[t].size(); ++j)
      acc += head.weights[t](static_cast<Eigen::Index>(j)) * h(mapping.tokens[t][j]);
    s[t] = acc;
  }
  return softmax(s);
}

/// Mean over batch and members of -log p(gold), floored like the library.
inline double ensemble_loss(const std::vector<smprompt::MaskLogits>& logits,
                            const std::vector<smprompt::LabelMapping>& mappings,
                            const std::vector<smprompt::MappingHead<double>>& heads, bool shared,
                            const std::vector<int>& gold) {
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    for (std::size_t b = 0; b < mappings.size(); ++b) {
      const auto p = weighted(logits[i], mappings[b], heads[shared ? 0 : b])[static_cast<std::size_t>(gold[i])];
      total -= std::log(p < 1e-12 ? 1e-12 : p);
    }
  return total / static_cast<double>(logits.size() * mappings.size());
}

inline double gelu(double z) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * z * (1.0 + std::tanh(c * (z + 0.044715 * z * z * z)));
}

/// Mask logits of a one-layer TinyMlm, element by element.
inline Vector tiny_mlm_logits(const smprompt::lm::TinyMlmParams& p, const std::vector<int>& ids, int mask) {
  const std::size_t n = ids.size();
  const auto d = static_cast<std::size_t>(p.token_embedding.cols());
  const auto ff = static_cast<std::size_t>(p.layers[0].w1.cols());
  const auto& L = p.layers[0];
  auto I = [](std::size_t i) { return static_cast<Eigen::Index>(i); };

  std::vector<Vector> x(n, Vector(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      x[i][c] = p.token_embedding(ids[i], I(c)) + p.position_embedding(I(i), I(c));

  auto affine = [&](const std::vector<Vector>& in, const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    std::vector<Vector> out(in.size(), Vector(static_cast<std::size_t>(w.cols())));
    for (std::size_t i = 0; i < in.size(); ++i)
      for (std::size_t c = 0; c < out[i].size(); ++c) {
        double acc = b(I(c));
        for (std::size_t r = 0; r < in[i].size(); ++r) acc += in[i][r] * w(I(r), I(c));
        out[i][c] = acc;
      }
    return out;
  };
  const auto q = affine(x, L.wq, L.bq), k = affine(x, L.wk, L.bk), v = affine(x, L.wv, L.bv);
  std::vector<Vector> ctx(n, Vector(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    Vector s(n);
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i][c] * k[j][c];
      s[j] = dot / std::sqrt(static_cast<double>(d));
    }
    const auto a = softmax(s);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) ctx[i][c] += a[j] * v[j][c];
  }
  auto o = affine(ctx, L.wo, L.bo);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) o[i][c] += x[i][c];
  auto pre = affine(o, L.w1, L.b1);
  for (auto& row : pre)
    for (std::size_t c = 0; c < ff; ++c) row[c] = gelu(row[c]);
  auto f = affine(pre, L.w2, L.b2);
  const auto& h = o[static_cast<std::size_t>(mask)];
  const auto& g = f[static_cast<std::size_t>(mask)];
  Vector logits(static_cast<std::size_t>(p.token_embedding.rows()));
  for (std::size_t t = 0; t < logits.size(); ++t) {
    double acc = p.output_bias(I(t));
    for (std::size_t c = 0; c < d; ++c) acc += p.token_embedding(I(t), I(c)) * (h[c] + g[c]);
    logits[t] = acc;
  }
  return logits;
}

}  // namespace oracle
