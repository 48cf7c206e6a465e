#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "smprompt/error.hpp"
#include "smprompt/lm/remote.hpp"
#include "smprompt/lm/tiny_mlm.hpp"

using namespace smprompt;
using namespace smprompt::lm;

namespace {

TinyMlmConfig config(int dim = 16, int layers = 1, std::uint64_t seed = 1) {
  TinyMlmConfig c;
  c.vocab_size = 12;
  c.dim = dim;
  c.layers = layers;
  c.ff_dim = 24;
  c.max_length = 8;
  c.seed = seed;
  return c;
}

RenderedInput input(std::vector<TokenId> ids) {
  RenderedInput r;
  r.ids = std::move(ids);
  r.mask_position = static_cast<std::size_t>(std::find(r.ids.begin(), r.ids.end(), Tokenizer::kMask) - r.ids.begin());
  return r;
}

double dot(const MaskLogits& a, const MaskLogits& b) { return a.dot(b); }

}  // namespace

TEST_SUITE("tiny_mlm") {

TEST_CASE("configuration bounds") {
  CHECK_NOTHROW(config().validate());
  CHECK_THROWS_AS(TinyMlm(config(8)), ValidationError);
  CHECK_THROWS_AS(TinyMlm(config(16, 5)), ValidationError);
  auto c = config();
  c.vocab_size = 3;
  CHECK_THROWS_AS(TinyMlm{c}, ValidationError);
}

TEST_CASE("a zero model gives equal logits") {
  auto c = config();
  c.init_std = 0;
  TinyMlm m(c);
  auto l = m.score(input({2, 5, 4, 3}));
  CHECK(l.size() == 12);
  CHECK((l.array() == l(0)).all());
}

TEST_CASE("construction and scoring are deterministic") {
  TinyMlm a(config()), b(config()), c(config(16, 1, 2));
  const auto in = input({2, 6, 7, 4, 3});
  CHECK((a.score(in).array() == b.score(in).array()).all());
  CHECK_FALSE((a.score(in).array() == c.score(in).array()).all());
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("forward pass matches the reference loops") {
  TinyMlm m(config());
  for (const auto& ids : std::vector<std::vector<int>>{{5, 4, 7}, {4}, {2, 9, 10, 11, 4, 3}}) {
    const auto in = input(ids);
    const auto got = m.score(in);
    const auto ref = oracle::tiny_mlm_logits(m.params(), ids, static_cast<int>(in.mask_position));
    for (Eigen::Index t = 0; t < got.size(); ++t)
      CHECK(got(t) == doctest::Approx(ref[static_cast<std::size_t>(t)]).epsilon(1e-6));
  }
}

TEST_CASE("input validation") {
  TinyMlm m(config());
  CHECK_THROWS_AS(m.score(input({5, 6})), ValidationError);
  CHECK_THROWS_AS(m.score(input({4, 4})), ValidationError);
  CHECK_THROWS_AS(m.score(input({4, 5, 6, 7, 8, 9, 10, 11, 5})), ValidationError);
  CHECK_THROWS_AS(m.score(input({4, 12})), ValidationError);
}

TEST_CASE("backward matches central differences") {
  for (int layers : {1, 2}) {
    TinyMlm m(config(16, layers));
    const auto in = input({2, 6, 8, 4, 9, 3});
    std::mt19937_64 rng(21);
    MaskLogits c(12);
    std::normal_distribution<double> n(0, 1);
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = n(rng);

    auto grads = TinyMlmParams::zeros(m.config());
    m.backward(in, c, grads);
    auto params = m.params().spans();
    const auto g = std::as_const(grads).spans();
    // Skip token rows that never appear: their gradient is exactly zero.
    const double step = 1e-5;
    int checked = 0;
    while (checked < 20) {
      const auto block = rng() % params.size();
      const auto idx = rng() % params[block].size();
      const double analytic = g[block][idx];
      if (analytic == 0.0) continue;
      double& p = params[block][idx];
      const double saved = p;
      p = saved + step;
      const double up = dot(c, m.score(in));
      p = saved - step;
      const double down = dot(c, m.score(in));
      p = saved;
      const double numeric = (up - down) / (2 * step);
      CHECK(std::abs(numeric - analytic) <= 1e-3 * std::max(std::abs(analytic), 1e-4));
      ++checked;
    }
  }
}

TEST_CASE("gelu") {
  for (double z : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    CHECK(gelu(z) == doctest::Approx(oracle::gelu(z)).epsilon(1e-14));
    const double h = 1e-6;
    CHECK(gelu_derivative(z) == doctest::Approx((gelu(z + h) - gelu(z - h)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("a zero learning rate leaves the parameters unchanged") {
  TinyMlm m(config());
  const auto before = m.params();
  Optimizer opt({OptimizerConfig::Kind::AdamW, 0.0});
  auto loss = [](const std::vector<MaskLogits>& l) {
    LossAndGrad out{l[0].sum(), {MaskLogits::Ones(l[0].size())}};
    return out;
  };
  m.train_step({input({2, 5, 4, 3})}, loss, opt);
  auto a = before.spans();
  auto b = std::as_const(m).params().spans();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::equal(a[i].begin(), a[i].end(), b[i].begin()));
}

TEST_CASE("fine-tuning fits a tiny labelled set") {
  TinyMlm m(config(16, 1, 3));
  LabelMapping mapping{"m", {{10}, {11}}};
  const std::vector<RenderedInput> batch{input({2, 5, 6, 4, 3}), input({2, 7, 8, 4, 3}),
                                         input({2, 5, 8, 4, 3}), input({2, 7, 6, 4, 3})};
  const std::vector<int> gold{0, 1, 0, 1};
  auto head = MappingHead<double>::identity(mapping);
  auto loss = [&](const std::vector<MaskLogits>& logits) {
    LossAndGrad out;
    auto g = head_gradients(logits, mapping, head, gold);
    std::vector<Vec<double>> preds;
    for (const auto& l : logits) preds.push_back(predict_single(l, mapping));
    out.loss = smprompt::loss(preds, gold).value;
    out.d_logits = std::move(g.logits);
    return out;
  };
  Optimizer opt({OptimizerConfig::Kind::AdamW, 1e-2});
  double last = 0;
  int steps = 0;
  for (; steps < 500; ++steps) {
    last = m.train_step(batch, loss, opt);
    if (last < 0.05) break;
  }
  CHECK(last < 0.05);
  MESSAGE("converged after " << steps << " steps");
}

TEST_CASE("checkpoint round trip") {
  TinyMlm m(config(16, 2));
  std::stringstream buf;
  m.save(buf);
  auto r = TinyMlm::load(buf);
  CHECK(r.config().dim == 16);
  CHECK(r.config().layers == 2);
  const auto in = input({2, 6, 4, 3});
  CHECK((r.score(in).array() == m.score(in).array()).all());
  CHECK(r.fingerprint() == m.fingerprint());

  std::stringstream bad("not a checkpoint");
  CHECK_THROWS_AS(TinyMlm::load(bad), ParseError);
  auto text = buf.str();
  std::stringstream cut(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(TinyMlm::load(cut), ParseError);
}

TEST_CASE("clones are independent") {
  TinyMlm m(config());
  auto c = m.clone();
  Optimizer opt({OptimizerConfig::Kind::Sgd, 0.5});
  const auto in = input({2, 5, 4, 3});
  const auto before = m.score(in);
  auto loss = [](const std::vector<MaskLogits>& l) {
    return LossAndGrad{l[0](5), {MaskLogits::Unit(l[0].size(), 5)}};
  };
  c->train_step({in}, loss, opt);
  CHECK((m.score(in).array() == before.array()).all());
  CHECK(c->score(in)(5) < before(5));
}

TEST_CASE("optimizer") {
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.5, -1.0};
  Optimizer sgd({OptimizerConfig::Kind::Sgd, 0.1});
  sgd.step({std::span<double>(p)}, {std::span<const double>(g)});
  CHECK(p[0] == doctest::Approx(0.95));
  CHECK(p[1] == doctest::Approx(-1.9));
  // First AdamW step moves every coordinate by lr against the gradient sign.
  std::vector<double> q{1.0, -2.0};
  Optimizer adam({OptimizerConfig::Kind::AdamW, 0.01});
  adam.step({std::span<double>(q)}, {std::span<const double>(g)});
  CHECK(q[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(-1.99).epsilon(1e-6));
  std::vector<double> r{1.0};
  CHECK_THROWS_AS(adam.step({std::span<double>(r)}, {std::span<const double>(g)}), ValidationError);
}

}

TEST_SUITE("remote") {

namespace {
Handshake handshake(std::size_t vocab = 12) { return {vocab, 8, Tokenizer::kMask}; }

MaskLogits fixed_logits(std::size_t vocab) {
  MaskLogits l(static_cast<Eigen::Index>(vocab));
  for (Eigen::Index i = 0; i < l.size(); ++i) l(i) = std::sin(0.37 * static_cast<double>(i)) * 1e3 / 3.0;
  return l;
}
}  // namespace

TEST_CASE("remote scores round-trip bit-exactly") {
  TinyMlm local(config());
  FixtureServer server(handshake(), [&](const std::vector<TokenId>& ids, std::size_t mask) {
    RenderedInput r;
    r.ids = ids;
    r.mask_position = mask;
    return local.score(r);
  });
  RemoteBackend remote(server.endpoint());
  CHECK(remote.vocab_size() == 12);
  CHECK(remote.max_length() == 8);
  const auto in = input({2, 6, 4, 3});
  CHECK((remote.score(in).array() == local.score(in).array()).all());
  CHECK(server.requests() == 1);
  CHECK_FALSE(remote.trainable());
}

TEST_CASE("wire encoding is exact for awkward doubles") {
  MaskLogits l(4);
  l << 0.1, -1e-300, 1.0 / 3.0, 12345678.901234567;
  const auto back = decode_logits(encode_logits(l), 4);
  CHECK((back.array() == l.array()).all());
  CHECK(encode_score_request(input({2, 4, 3})) == R"({"mask_index":1,"tokens":[2,4,3]})");
  CHECK(encode_handshake(handshake()) == R"({"mask_id":4,"max_len":8,"vocab_size":12})");
}

TEST_CASE("malformed responses raise protocol errors") {
  FixtureServer server(handshake(), [](const std::vector<TokenId>&, std::size_t) { return fixed_logits(12); });
  RemoteBackend remote(server.endpoint());
  const auto in = input({2, 4, 3});
  CHECK_NOTHROW(remote.score(in));
  server.set_fault(FixtureServer::Fault::TruncatedBody);
  CHECK_THROWS_AS(remote.score(in), ProtocolError);
  server.set_fault(FixtureServer::Fault::WrongLength);
  CHECK_THROWS_AS(remote.score(in), ProtocolError);

  CHECK_THROWS_AS(decode_handshake(R"({"vocab_size":0,"max_len":8,"mask_id":0})"), ProtocolError);
  CHECK_THROWS_AS(decode_handshake(R"({"vocab_size":4,"max_len":8,"mask_id":4})"), ProtocolError);
  CHECK_THROWS_AS(decode_handshake(R"([1,2])"), ProtocolError);
  CHECK_THROWS_AS(decode_logits(R"({"logits":[1,"x"]})", 2), ProtocolError);
}

TEST_CASE("a large vocabulary is accepted") {
  FixtureServer server(handshake(50265), [](const std::vector<TokenId>&, std::size_t) { return fixed_logits(50265); });
  RemoteBackend remote(server.endpoint());
  CHECK(remote.vocab_size() == 50265);
  const auto l = remote.score(input({2, 4, 3}));
  CHECK((l.array() == fixed_logits(50265).array()).all());
}

TEST_CASE("training a remote backend is unsupported") {
  FixtureServer server(handshake(), [](const std::vector<TokenId>&, std::size_t) { return fixed_logits(12); });
  RemoteBackend remote(server.endpoint());
  Optimizer opt({});
  auto loss = [](const std::vector<MaskLogits>& l) { return LossAndGrad{0.0, {l[0]}}; };
  CHECK_THROWS_AS(remote.train_step({input({2, 4, 3})}, loss, opt), UnsupportedOperation);
  auto clone = remote.clone();
  CHECK((clone->score(input({2, 4, 3})).array() == fixed_logits(12).array()).all());
}

TEST_CASE("an unreachable service raises a network error after retrying") {
  int port = 0;
  {
    FixtureServer probe(handshake(), [](const std::vector<TokenId>&, std::size_t) { return fixed_logits(12); });
    port = probe.endpoint().port;
  }
  RemoteOptions o;
  o.attempts = 2;
  o.timeout_seconds = 1.0;
  try {
    RemoteBackend remote({"127.0.0.1", port}, o);
    FAIL("expected a network error");
  } catch (const NetworkError& e) {
    CHECK(e.attempts() == 2);
  }
}

}
