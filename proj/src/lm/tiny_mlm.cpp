#include "smprompt/lm/tiny_mlm.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "../fnv.hpp"
#include "smprompt/error.hpp"

namespace smprompt::lm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
constexpr const char* kCheckpointMagic = "smprompt-tiny-mlm";
constexpr int kCheckpointVersion = 1;

MatrixXd add_bias(const MatrixXd& x, const VectorXd& b) { return x.rowwise() + b.transpose(); }

void softmax_rows(MatrixXd& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_derivative(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void TinyMlmConfig::validate() const {
  if (vocab_size < 5) throw ValidationError("tiny MLM vocabulary must include the special tokens");
  if (dim < 16 || dim > 128) throw ValidationError("tiny MLM dim must be in [16, 128]");
  if (layers < 1 || layers > 4) throw ValidationError("tiny MLM layers must be in [1, 4]");
  if (ff_dim < 1) throw ValidationError("tiny MLM ff_dim must be positive");
  if (max_length < 2) throw ValidationError("tiny MLM max_length must be at least 2");
  if (!(init_std >= 0)) throw ValidationError("tiny MLM init_std must be non-negative");
}

TinyMlmParams TinyMlmParams::zeros(const TinyMlmConfig& c) {
  const auto v = static_cast<Eigen::Index>(c.vocab_size);
  const auto l = static_cast<Eigen::Index>(c.max_length);
  const Eigen::Index d = c.dim;
  const Eigen::Index f = c.ff_dim;
  TinyMlmParams p;
  p.token_embedding = MatrixXd::Zero(v, d);
  p.position_embedding = MatrixXd::Zero(l, d);
  for (int i = 0; i < c.layers; ++i) {
    EncoderLayerParams layer;
    layer.wq = layer.wk = layer.wv = layer.wo = MatrixXd::Zero(d, d);
    layer.bq = layer.bk = layer.bv = layer.bo = VectorXd::Zero(d);
    layer.w1 = MatrixXd::Zero(d, f);
    layer.b1 = VectorXd::Zero(f);
    layer.w2 = MatrixXd::Zero(f, d);
    layer.b2 = VectorXd::Zero(d);
    p.layers.push_back(std::move(layer));
  }
  p.output_bias = VectorXd::Zero(v);
  return p;
}

std::vector<std::span<double>> TinyMlmParams::spans() {
  std::vector<std::span<double>> out;
  visit([&](const std::string&, auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

std::vector<std::span<const double>> TinyMlmParams::spans() const {
  std::vector<std::span<const double>> out;
  visit([&](const std::string&, const auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

std::size_t TinyMlmParams::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

TinyMlm::TinyMlm(TinyMlmConfig config) : config_(config) {
  config_.validate();
  params_ = TinyMlmParams::zeros(config_);
  if (config_.init_std > 0) {
    std::mt19937_64 engine(config_.seed);
    std::normal_distribution<double> dist(0.0, config_.init_std);
    params_.visit([&](const std::string&, auto& t) {
      // Biases start at zero.
      if constexpr (std::is_same_v<std::decay_t<decltype(t)>, VectorXd>) return;
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(engine);
    });
  }
}

TinyMlm::TinyMlm(TinyMlmConfig config, TinyMlmParams params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  auto expected = TinyMlmParams::zeros(config_).spans();
  auto actual = params_.spans();
  if (expected.size() != actual.size())
    throw ValidationError("parameter tensors do not match the model configuration");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (expected[i].size() != actual[i].size())
      throw ValidationError("parameter tensor shapes do not match the model configuration");
}

std::string TinyMlm::fingerprint() const {
  detail::Fnv1a h;
  params_.visit([&](const std::string& name, const auto& t) {
    h.add(name);
    h.add_raw(t.data(), sizeof(double) * static_cast<std::size_t>(t.size()));
  });
  std::ostringstream out;
  out << "tiny vocab=" << config_.vocab_size << " dim=" << config_.dim << " layers=" << config_.layers
      << " ff=" << config_.ff_dim << " max_len=" << config_.max_length << " params=" << h.hex();
  return out.str();
}

std::unique_ptr<LmBackend> TinyMlm::clone() const { return std::make_unique<TinyMlm>(*this); }

struct TinyMlm::LayerCache {
  MatrixXd x;     // input
  MatrixXd q, k, v;
  MatrixXd attn;  // row-softmaxed scores
  MatrixXd ctx;   // attn * v
  MatrixXd x1;    // after attention residual
  MatrixXd pre;   // x1 * w1 + b1
  MatrixXd act;   // gelu(pre)
};

struct TinyMlm::Cache {
  std::vector<LayerCache> layers;
  MatrixXd out;
};

TinyMlm::Cache TinyMlm::forward(const std::vector<TokenId>& ids) const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (ids.empty()) throw ValidationError("empty input");
  if (ids.size() > config_.max_length)
    throw ValidationError("input of " + std::to_string(ids.size()) + " tokens exceeds max length " +
                          std::to_string(config_.max_length));
  MatrixXd x(n, config_.dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw ValidationError("token id " + std::to_string(id) + " outside the vocabulary");
    x.row(i) = params_.token_embedding.row(id) + params_.position_embedding.row(i);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));
  Cache cache;
  for (const auto& p : params_.layers) {
    LayerCache c;
    c.x = x;
    c.q = add_bias(x * p.wq, p.bq);
    c.k = add_bias(x * p.wk, p.bk);
    c.v = add_bias(x * p.wv, p.bv);
    c.attn = (c.q * c.k.transpose()) * scale;
    softmax_rows(c.attn);
    c.ctx = c.attn * c.v;
    c.x1 = x + add_bias(c.ctx * p.wo, p.bo);
    c.pre = add_bias(c.x1 * p.w1, p.b1);
    c.act = c.pre.unaryExpr([](double z) { return gelu(z); });
    x = c.x1 + add_bias(c.act * p.w2, p.b2);
    cache.layers.push_back(std::move(c));
  }
  cache.out = std::move(x);
  return cache;
}

Eigen::MatrixXd TinyMlm::encode(const std::vector<TokenId>& ids) const { return forward(ids).out; }

MaskLogits TinyMlm::score(const RenderedInput& input) const {
  validate(input);
  return mask_logits(forward(input.ids), input);
}

MaskLogits TinyMlm::backward(const RenderedInput& input, const MaskLogits& d_logits,
                             TinyMlmParams& g) const {
  validate(input);
  auto cache = forward(input.ids);
  backward(cache, input, d_logits, g);
  return mask_logits(cache, input);
}

MaskLogits TinyMlm::mask_logits(const Cache& cache, const RenderedInput& input) const {
  const auto m = static_cast<Eigen::Index>(input.mask_position);
  return params_.token_embedding * cache.out.row(m).transpose() + params_.output_bias;
}

void TinyMlm::backward(const Cache& cache, const RenderedInput& input, const MaskLogits& d_logits,
                       TinyMlmParams& g) const {
  const auto m = static_cast<Eigen::Index>(input.mask_position);
  const VectorXd h = cache.out.row(m).transpose();

  // Tied projection.
  g.token_embedding += d_logits * h.transpose();
  g.output_bias += d_logits;
  MatrixXd dx = MatrixXd::Zero(cache.out.rows(), cache.out.cols());
  dx.row(m) = (params_.token_embedding.transpose() * d_logits).transpose();

  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));
  for (std::size_t li = params_.layers.size(); li-- > 0;) {
    const auto& p = params_.layers[li];
    auto& gp = g.layers[li];
    const auto& c = cache.layers[li];

    // x_out = x1 + gelu(x1 w1 + b1) w2 + b2
    MatrixXd dx1 = dx;
    gp.w2 += c.act.transpose() * dx;
    gp.b2 += dx.colwise().sum().transpose();
    MatrixXd dpre = (dx * p.w2.transpose()).cwiseProduct(
        c.pre.unaryExpr([](double z) { return gelu_derivative(z); }));
    gp.w1 += c.x1.transpose() * dpre;
    gp.b1 += dpre.colwise().sum().transpose();
    dx1 += dpre * p.w1.transpose();

    // x1 = x + (attn v) wo + bo
    MatrixXd dxin = dx1;
    gp.wo += c.ctx.transpose() * dx1;
    gp.bo += dx1.colwise().sum().transpose();
    MatrixXd dctx = dx1 * p.wo.transpose();
    MatrixXd dattn = dctx * c.v.transpose();
    MatrixXd dv = c.attn.transpose() * dctx;
    // Row-wise softmax backward, then the 1/sqrt(d) scaling.
    VectorXd rowdot = (dattn.cwiseProduct(c.attn)).rowwise().sum();
    MatrixXd ds = c.attn.cwiseProduct(dattn.colwise() - rowdot) * scale;
    MatrixXd dq = ds * c.k;
    MatrixXd dk = ds.transpose() * c.q;

    gp.wq += c.x.transpose() * dq;
    gp.bq += dq.colwise().sum().transpose();
    gp.wk += c.x.transpose() * dk;
    gp.bk += dk.colwise().sum().transpose();
    gp.wv += c.x.transpose() * dv;
    gp.bv += dv.colwise().sum().transpose();
    dxin += dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
    dx = std::move(dxin);
  }

  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    g.token_embedding.row(input.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    g.position_embedding.row(i) += dx.row(i);
  }
}

double TinyMlm::train_step(const std::vector<RenderedInput>& batch, const LossFn& loss,
                           Optimizer& optimizer) {
  if (batch.empty()) throw ValidationError("empty training batch");
  std::vector<Cache> caches;
  std::vector<MaskLogits> logits;
  caches.reserve(batch.size());
  logits.reserve(batch.size());
  for (const auto& in : batch) {
    validate(in);
    caches.push_back(forward(in.ids));
    logits.push_back(mask_logits(caches.back(), in));
  }
  auto lg = loss(logits);
  if (lg.d_logits.size() != batch.size())
    throw ValidationError("loss returned the wrong number of logit gradients");

  auto grads = TinyMlmParams::zeros(config_);
  for (std::size_t i = 0; i < batch.size(); ++i) backward(caches[i], batch[i], lg.d_logits[i], grads);
  optimizer.step(params_.spans(), std::as_const(grads).spans());
  return lg.loss;
}

void TinyMlm::save(std::ostream& out) const {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "config vocab_size=" << config_.vocab_size << " dim=" << config_.dim
      << " layers=" << config_.layers << " ff_dim=" << config_.ff_dim
      << " max_length=" << config_.max_length << " seed=" << config_.seed << '\n';
  out << std::setprecision(17);
  params_.visit([&](const std::string& name, const auto& t) {
    out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (Eigen::Index i = 0; i < t.size(); ++i) out << (i ? " " : "") << t.data()[i];
    out << '\n';
  });
}

void TinyMlm::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  save(out);
}

TinyMlm TinyMlm::load(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic) throw ParseError("not a tiny MLM checkpoint", 1);
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 1);

  std::string word;
  in >> word;
  if (word != "config") throw ParseError("missing config line", 2);
  TinyMlmConfig c;
  for (int i = 0; i < 6; ++i) {
    in >> word;
    auto eq = word.find('=');
    if (eq == std::string::npos) throw ParseError("malformed config entry '" + word + "'", 2);
    const auto key = word.substr(0, eq);
    const auto value = word.substr(eq + 1);
    if (key == "vocab_size") c.vocab_size = std::stoull(value);
    else if (key == "dim") c.dim = std::stoi(value);
    else if (key == "layers") c.layers = std::stoi(value);
    else if (key == "ff_dim") c.ff_dim = std::stoi(value);
    else if (key == "max_length") c.max_length = std::stoull(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else throw ParseError("unknown config key '" + key + "'", 2);
  }
  c.validate();
  auto params = TinyMlmParams::zeros(c);
  std::size_t line = 2;
  params.visit([&](const std::string& name, auto& t) {
    line += 2;
    std::string tag, got;
    Eigen::Index rows = 0, cols = 0;
    in >> tag >> got >> rows >> cols;
    if (tag != "tensor" || got != name)
      throw ParseError("expected tensor " + name + ", found '" + got + "'", line);
    if (rows != t.rows() || cols != t.cols())
      throw ParseError("tensor " + name + " has shape " + std::to_string(rows) + "x" +
                           std::to_string(cols) + ", expected " + std::to_string(t.rows()) + "x" +
                           std::to_string(t.cols()),
                       line);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      std::string tok;
      if (!(in >> tok)) throw ParseError("tensor " + name + " is truncated", line + 1);
      t.data()[i] = std::strtod(tok.c_str(), nullptr);
    }
  });
  return TinyMlm(c, std::move(params));
}

TinyMlm TinyMlm::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  return load(in);
}

}  // namespace smprompt::lm
