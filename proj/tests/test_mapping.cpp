#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "smprompt/mapping.hpp"

using namespace smprompt;

namespace {

Vec<double> vec(std::initializer_list<double> v) {
  Vec<double> out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Vec<double> random_logits(std::mt19937_64& rng, Eigen::Index vocab, double scale = 2.0) {
  std::normal_distribution<double> n(0, scale);
  Vec<double> h(vocab);
  for (Eigen::Index i = 0; i < vocab; ++i) h(i) = n(rng);
  return h;
}

// Labels x n distinct token ids drawn from [0, vocab).
LabelMapping random_mapping(std::mt19937_64& rng, std::size_t labels, std::size_t n, int vocab) {
  std::vector<int> ids(static_cast<std::size_t>(vocab));
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  LabelMapping m{"random", {}};
  std::size_t next = 0;
  for (std::size_t t = 0; t < labels; ++t) {
    m.tokens.emplace_back();
    for (std::size_t j = 0; j < n; ++j) m.tokens.back().push_back(ids[next++]);
  }
  return m;
}

MappingHead<double> random_head(std::mt19937_64& rng, const LabelMapping& m) {
  auto h = init_head<double>(m, rng());
  std::normal_distribution<double> n(0, 0.5);
  for (Eigen::Index t = 0; t < h.bias.size(); ++t) h.bias(t) = n(rng);
  return h;
}

// Every scalar parameter of the ensemble heads plus the logits, by reference.
std::vector<double*> coordinates(MappingEnsemble<double>& e, std::vector<Vec<double>>& logits) {
  std::vector<double*> out;
  for (auto& h : e.heads) {
    for (auto& w : h.weights)
      for (Eigen::Index j = 0; j < w.size(); ++j) out.push_back(&w(j));
    for (Eigen::Index t = 0; t < h.bias.size(); ++t) out.push_back(&h.bias(t));
  }
  for (auto& l : logits)
    for (Eigen::Index i = 0; i < l.size(); ++i) out.push_back(&l(i));
  return out;
}

std::vector<double> analytic(const EnsembleGradients<double>& g) {
  std::vector<double> out;
  for (const auto& h : g.heads) {
    for (const auto& w : h.weights) out.insert(out.end(), w.data(), w.data() + w.size());
    out.insert(out.end(), h.bias.data(), h.bias.data() + h.bias.size());
  }
  for (const auto& l : g.logits) out.insert(out.end(), l.data(), l.data() + l.size());
  return out;
}

}  // namespace

TEST_SUITE("mapping") {

TEST_CASE("softmax of two logits") {
  auto p = softmax(vec({2.0, 1.0}));
  CHECK(p(0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(p(1) == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("uniform prediction costs ln of the label count") {
  std::vector<Vec<double>> preds{Vec<double>::Constant(5, 0.2)};
  CHECK(loss(preds, {3}).value == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("floored loss terms are counted") {
  std::vector<Vec<double>> preds{vec({1.0, 0.0}), vec({0.5, 0.5})};
  auto l = loss(preds, {1, 0});
  CHECK(l.floored == 1);
  CHECK(l.value == doctest::Approx((-std::log(1e-12) + std::log(2.0)) / 2));
}

TEST_CASE("single-token prediction is a softmax over the gathered logits") {
  LabelMapping m{"sst2", {{7}, {3}}};
  auto h = vec({0, 0, 0, 1.0, 0, 0, 0, 2.0});
  auto p = predict_single(h, m);
  CHECK(p(0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK_THROWS_AS(predict_single(h, LabelMapping{"multi", {{1, 2}, {3}}}), ValidationError);
  CHECK_THROWS_AS(predict_single(h, LabelMapping{"oob", {{1}, {8}}}), ValidationError);
  auto bad = h;
  bad(0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(predict_single(bad, m), ValidationError);
}

TEST_CASE("weighted prediction matches the reference loop") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_mapping(rng, 3, 2, 20);
    const auto head = random_head(rng, m);
    const auto h = random_logits(rng, 20);
    const auto p = predict_weighted(h, m, head);
    const auto ref = oracle::weighted(h, m, head);
    for (std::size_t t = 0; t < 3; ++t) CHECK(p(static_cast<Eigen::Index>(t)) == doctest::Approx(ref[t]).epsilon(1e-12));
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("identity head reproduces single-token prediction exactly") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_mapping(rng, 2 + trial % 4, 1, 30);
    const auto h = random_logits(rng, 30, 5.0);
    const auto a = predict_weighted(h, m, MappingHead<double>::identity(m));
    const auto b = predict_single(h, m);
    CHECK((a.array() == b.array()).all());
  }
}

TEST_CASE("identical ensemble members reproduce one member exactly") {
  std::mt19937_64 rng(13);
  for (int members = 1; members <= 8; ++members) {
    const auto m = random_mapping(rng, 3, 2, 15);
    const auto head = random_head(rng, m);
    MappingEnsemble<double> e{std::vector<LabelMapping>(static_cast<std::size_t>(members), m),
                              std::vector<MappingHead<double>>(static_cast<std::size_t>(members), head)};
    const auto h = random_logits(rng, 15);
    const auto joint = predict_ensemble(h, e);
    const auto one = predict_weighted(h, m, head);
    CHECK((joint.array() == one.array()).all());
  }
}

TEST_CASE("ensemble of two members averages their distributions") {
  auto avg = average_distributions<double>({vec({0.8, 0.2}), vec({0.6, 0.4})});
  CHECK(avg(0) == doctest::Approx(0.7));
  CHECK(avg(1) == doctest::Approx(0.3));
  CHECK_THROWS_AS(average_distributions<double>({}), ValidationError);
  CHECK_THROWS_AS(average_distributions<double>({vec({1.0}), vec({0.5, 0.5})}), ValidationError);

  // Same thing through predict_ensemble: members built to give those rows.
  LabelMapping m{"m", {{0}, {1}}};
  MappingEnsemble<double> e{{m, m}, {MappingHead<double>::identity(m), MappingHead<double>::identity(m)}};
  e.heads[0].bias = vec({std::log(0.8), std::log(0.2)});
  e.heads[1].bias = vec({std::log(0.6), std::log(0.4)});
  auto p = predict_ensemble(vec({0.0, 0.0}), e);
  CHECK(p(0) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("predictions are invariant to a constant logit shift") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_mapping(rng, 4, 1, 25);
    const auto h = random_logits(rng, 25);
    const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
    const Vec<double> shifted = (h.array() + c).matrix();
    const auto a = predict_single(h, m), b = predict_single(shifted, m);
    for (Eigen::Index t = 0; t < a.size(); ++t) CHECK(a(t) == doctest::Approx(b(t)).epsilon(1e-9));
  }
}

TEST_CASE("Xavier initialisation variance") {
  for (std::size_t n : {1u, 3u, 8u}) {
    const double expected = 2.0 / static_cast<double>(n + 1);
    LabelMapping m{"x", std::vector<std::vector<TokenId>>(1000, std::vector<TokenId>(n, 0))};
    double sum = 0, sq = 0;
    std::size_t count = 0;
    for (std::uint64_t seed = 0; count < 100000; ++seed) {
      const auto h = init_head<double>(m, seed);
      CHECK((h.bias.array() == 0).all());
      for (const auto& w : h.weights)
        for (Eigen::Index j = 0; j < w.size(); ++j, ++count) {
          sum += w(j);
          sq += w(j) * w(j);
        }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sq / static_cast<double>(count) - mean * mean;
    CHECK(std::abs(var - expected) / expected < 0.05);
  }
}

TEST_CASE("ensemble heads are seeded per member") {
  LabelMapping m{"m", {{0, 1}, {2, 3}}};
  auto e = make_ensemble<double>({m, m, m}, 5);
  REQUIRE(e.heads.size() == 3);
  CHECK(e.heads[1].weights[0] == init_head<double>(m, 6).weights[0]);
  CHECK(e.heads[0].weights[0] != e.heads[1].weights[0]);
  auto s = make_ensemble<double>({m, m}, 5, true);
  CHECK(s.heads.size() == 1);
  CHECK(s.shared());
  CHECK_THROWS_AS(make_ensemble<double>({m, LabelMapping{"o", {{0}, {1}}}}, 1, true), ValidationError);
  CHECK_THROWS_AS(make_ensemble<double>({m, LabelMapping{"o", {{0}, {1}, {2}}}}, 1), ValidationError);
  CHECK_THROWS_AS(make_ensemble<double>({}, 1), ValidationError);
}

TEST_CASE("gradients match central differences") {
  std::mt19937_64 rng(15);
  const double step = 1e-5;
  int trials = 0;
  for (int round = 0; round < 40; ++round) {
    const std::size_t labels = 2 + rng() % 3, n = 1 + rng() % 3, members = 1 + rng() % 3;
    const bool shared = members > 1 && rng() % 2 == 0;
    const int vocab = static_cast<int>(labels * n) + 4;
    std::vector<LabelMapping> mappings;
    for (std::size_t b = 0; b < members; ++b) mappings.push_back(random_mapping(rng, labels, n, vocab));
    auto e = make_ensemble<double>(mappings, rng(), shared);
    for (auto& h : e.heads) h = random_head(rng, mappings[0]);
    std::vector<Vec<double>> logits;
    std::vector<int> gold;
    for (std::size_t i = 0, batch = 1 + rng() % 4; i < batch; ++i) {
      logits.push_back(random_logits(rng, vocab));
      gold.push_back(static_cast<int>(rng() % labels));
    }
    const auto g = analytic(ensemble_gradients(logits, e, gold));
    auto coords = coordinates(e, logits);
    REQUIRE(coords.size() == g.size());
    for (int probe = 0; probe < 5; ++probe, ++trials) {
      const auto c = rng() % coords.size();
      const double saved = *coords[c];
      *coords[c] = saved + step;
      const double up = oracle::ensemble_loss(logits, e.mappings, e.heads, e.shared(), gold);
      *coords[c] = saved - step;
      const double down = oracle::ensemble_loss(logits, e.mappings, e.heads, e.shared(), gold);
      *coords[c] = saved;
      const double numeric = (up - down) / (2 * step);
      // Relative check, with an absolute floor for near-zero gradients.
      CHECK(std::abs(numeric - g[c]) <= 1e-4 * std::max(std::abs(g[c]), 1e-3));
    }
  }
  CHECK(trials >= 100);
}

TEST_CASE("loss agrees with the reference and decreases under gradient descent") {
  std::mt19937_64 rng(16);
  const auto m = random_mapping(rng, 3, 2, 12);
  auto e = make_ensemble<double>({m, random_mapping(rng, 3, 2, 12)}, 3);
  std::vector<Vec<double>> logits;
  std::vector<int> gold;
  for (int i = 0; i < 6; ++i) {
    logits.push_back(random_logits(rng, 12));
    gold.push_back(i % 3);
  }
  double previous = ensemble_loss(logits, e, gold).value;
  CHECK(previous == doctest::Approx(oracle::ensemble_loss(logits, e.mappings, e.heads, false, gold)).epsilon(1e-12));
  for (int step = 0; step < 10; ++step) {
    const auto g = ensemble_gradients(logits, e, gold);
    for (std::size_t b = 0; b < e.heads.size(); ++b) {
      for (std::size_t t = 0; t < 3; ++t) e.heads[b].weights[t] -= 0.1 * g.heads[b].weights[t];
      e.heads[b].bias -= 0.1 * g.heads[b].bias;
    }
    const double now = ensemble_loss(logits, e, gold).value;
    CHECK(now < previous);
    previous = now;
  }
}

TEST_CASE("batch gradient is the mean of per-example gradients") {
  std::mt19937_64 rng(17);
  const auto m = random_mapping(rng, 3, 2, 10);
  const auto head = random_head(rng, m);
  std::vector<Vec<double>> logits;
  std::vector<int> gold;
  for (int i = 0; i < 5; ++i) {
    logits.push_back(random_logits(rng, 10));
    gold.push_back(static_cast<int>(rng() % 3));
  }
  const auto batch = head_gradients(logits, m, head, gold);
  auto mean = MappingHead<double>::zeros_like(head);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto one = head_gradients<double>({logits[i]}, m, head, {gold[i]});
    for (std::size_t t = 0; t < 3; ++t) mean.weights[t] += one.head.weights[t] / 5.0;
    mean.bias += one.head.bias / 5.0;
    CHECK(batch.logits[i].isApprox(one.logits[0] / 5.0, 1e-12));
  }
  for (std::size_t t = 0; t < 3; ++t) CHECK(batch.head.weights[t].isApprox(mean.weights[t], 1e-12));
  CHECK(batch.head.bias.isApprox(mean.bias, 1e-12));
}

TEST_CASE("mapping construction") {
  Tokenizer tok({"terrible", "great", "good"});
  std::vector<std::string> warnings;
  auto m = make_mapping("sst2", {{"terrible"}, {"great", "good"}}, tok, &warnings);
  CHECK(m.tokens == std::vector<std::vector<TokenId>>{{5}, {6, 7}});
  CHECK_FALSE(m.single_token());
  CHECK(warnings.empty());
  make_mapping("split", {{"great-good"}, {"terrible"}}, tok, &warnings);
  CHECK(warnings.size() == 1);
  CHECK_THROWS_AS(make_mapping("unk", {{"awful"}, {"great"}}, tok), ValidationError);
  CHECK_THROWS_AS(make_mapping("empty", {{}, {"great"}}, tok), ValidationError);
}

TEST_CASE("gradient vanishes at a confident correct prediction") {
  LabelMapping m{"m", {{0}, {1}}};
  const auto head = MappingHead<double>::identity(m);
  const auto g = head_gradients<double>({vec({800.0, 0.0})}, m, head, {0});
  CHECK(g.head.weights[0].norm() == 0.0);
  CHECK(g.head.bias.norm() == 0.0);
  CHECK(g.logits[0].norm() == 0.0);
}

TEST_CASE("ensemble prediction does not depend on member order") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<LabelMapping> maps;
    for (int b = 0; b < 4; ++b) maps.push_back(random_mapping(rng, 3, 2, 12));
    auto e = make_ensemble<double>(maps, rng());
    auto r = e;
    std::reverse(r.mappings.begin(), r.mappings.end());
    std::reverse(r.heads.begin(), r.heads.end());
    const auto h = random_logits(rng, 12);
    CHECK(predict_ensemble(h, e).isApprox(predict_ensemble(h, r), 1e-15));
  }
}

}
