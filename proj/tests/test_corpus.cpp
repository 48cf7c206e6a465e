#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "smprompt/corpus.hpp"
#include "smprompt/error.hpp"

using namespace smprompt;

namespace {

TaskSchema sst2_schema() {
  TaskSchema s;
  s.name = "sst2";
  s.labels = LabelSet({"negative", "positive"});
  s.label_codes = {"0", "1"};
  return s;
}

// SST-2-shaped pool: `per_label` examples of each label, interleaved.
std::vector<Example> pool(int per_label, int labels = 2) {
  std::vector<Example> out;
  for (int i = 0; i < per_label; ++i)
    for (int l = 0; l < labels; ++l)
      out.push_back({"ex" + std::to_string(out.size()), "text " + std::to_string(out.size()), std::nullopt, l});
  return out;
}

std::set<std::string> ids(const std::vector<Example>& v) {
  std::set<std::string> s;
  for (const auto& e : v) s.insert(e.id);
  return s;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("label sets reject duplicates and singletons") {
  CHECK_THROWS_AS(LabelSet({"a"}), ValidationError);
  CHECK_THROWS_AS(LabelSet({"a", "a"}), ValidationError);
  CHECK_THROWS_AS(LabelSet({"a", ""}), ValidationError);
  LabelSet l({"neg", "pos"});
  CHECK(l.find("pos") == 1);
  CHECK_FALSE(l.find("x"));
}

TEST_CASE("an SST-2 row maps to its fields") {
  std::istringstream in("a gorgeous film\t1\n");
  auto d = parse_dataset(in, sst2_schema());
  REQUIRE(d.examples.size() == 1);
  CHECK(d.examples[0].sent0 == "a gorgeous film");
  CHECK(d.examples[0].label == 1);
  CHECK_FALSE(d.examples[0].sent1);
  CHECK(d.examples[0].id == "sst2-0");
}

TEST_CASE("pair rows fill sent1") {
  TaskSchema s;
  s.name = "snli";
  s.sentence_pair = true;
  s.sent1_column = 1;
  s.label_column = 2;
  s.labels = LabelSet({"contradiction", "entailment", "neutral"});
  std::istringstream in("A man sleeps.\tA person rests.\tentailment\n");
  auto d = parse_dataset(in, s);
  REQUIRE(d.examples.size() == 1);
  CHECK(d.examples[0].sent1 == "A person rests.");
  CHECK(d.examples[0].label == 1);
}

TEST_CASE("dataset errors name the line and the label") {
  std::istringstream bad_label("fine\t1\nawful\t7\n");
  try {
    parse_dataset(bad_label, sst2_schema());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("'7'") != std::string::npos);
  }
  std::istringstream short_row("only one column\n");
  try {
    parse_dataset(short_row, sst2_schema());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("6920 rows give 6920 examples") {
  std::ostringstream rows;
  for (int i = 0; i < 6920; ++i) rows << "sentence " << i << '\t' << (i % 2) << '\n';
  std::istringstream in(rows.str());
  CHECK(parse_dataset(in, sst2_schema()).examples.size() == 6920);
}

TEST_CASE("CoNLL-U minimal block, empty file and bad heads") {
  std::istringstream in(
      "# text = good movie\n"
      "1\tgood\t_\tADJ\tJJ\t_\t2\tamod\t_\t_\n"
      "2\tmovie\t_\tNOUN\tNN\t_\t0\tROOT\t_\t_\n\n");
  auto s = parse_conllu(in);
  REQUIRE(s.size() == 1);
  CHECK(s[0].tokens[0].deprel == "amod");
  CHECK(s[0].tokens[1].deprel == "ROOT");
  CHECK(s[0].tokens[0].pos == "JJ");

  std::istringstream empty("");
  CHECK(parse_conllu(empty).empty());

  std::istringstream bad("1\tgood\t_\tADJ\tJJ\t_\tx\tamod\t_\t_\n");
  try {
    parse_conllu(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
  }
  std::istringstream missing("1\tgood\t_\tADJ\n");
  CHECK_THROWS_AS(parse_conllu(missing), ParseError);
}

TEST_CASE("CoNLL-U round trip on random trees") {
  std::mt19937_64 rng(3);
  const std::vector<std::string> tags{"NN", "JJ", "VBD", "DT", "RB"};
  const std::vector<std::string> rels{"amod", "nsubj", "obj", "det", "advmod"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<AnnotatedSentence> doc;
    for (int s = 0; s < 1 + trial % 4; ++s) {
      AnnotatedSentence sent;
      const int n = 1 + static_cast<int>(rng() % 9);
      const int root = 1 + static_cast<int>(rng() % static_cast<unsigned>(n));
      for (int i = 1; i <= n; ++i) {
        Token t;
        t.form = "w" + std::to_string(rng() % 100);
        t.pos = tags[rng() % tags.size()];
        t.head = i == root ? 0 : root;
        t.deprel = i == root ? "ROOT" : rels[rng() % rels.size()];
        sent.tokens.push_back(t);
      }
      doc.push_back(sent);
    }
    std::stringstream buf;
    write_conllu(buf, doc);
    CHECK(parse_conllu(buf) == doc);
  }
}

TEST_CASE("k-shot splits: balance, disjointness, determinism") {
  const auto examples = pool(40);
  const LabelSet labels({"negative", "positive"});
  for (int k : {1, 8, 16}) {
    CAPTURE(k);
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
      auto a = sample_kshot(examples, labels, k, seed);
      auto b = sample_kshot(examples, labels, k, seed);
      CHECK(a.train == b.train);
      CHECK(a.dev == b.dev);
      for (int l = 0; l < 2; ++l) {
        CHECK(std::count_if(a.train.begin(), a.train.end(), [&](const Example& e) { return e.label == l; }) == k);
        CHECK(std::count_if(a.dev.begin(), a.dev.end(), [&](const Example& e) { return e.label == l; }) == k);
      }
      auto tr = ids(a.train), dv = ids(a.dev);
      for (const auto& id : tr) CHECK_FALSE(dv.count(id));
    }
  }
}

TEST_CASE("SST-2 k=16 gives 32 train and 32 dev") {
  auto s = sample_kshot(pool(100), LabelSet({"negative", "positive"}), 16, 42);
  CHECK(s.train.size() == 32);
  CHECK(s.dev.size() == 32);
}

TEST_CASE("k=1 with two examples per label is a forced partition") {
  auto s = sample_kshot(pool(2), LabelSet({"negative", "positive"}), 1, 9);
  CHECK(s.train.size() == 2);
  CHECK(s.dev.size() == 2);
  auto all = ids(s.train);
  for (const auto& id : ids(s.dev)) all.insert(id);
  CHECK(all.size() == 4);
}

TEST_CASE("five seeds on 1000 examples give pairwise different train sets") {
  const auto examples = pool(500);
  std::vector<KShotSplit> splits;
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    splits.push_back(sample_kshot(examples, LabelSet({"negative", "positive"}), 16, seed));
  for (std::size_t i = 0; i < splits.size(); ++i)
    for (std::size_t j = i + 1; j < splits.size(); ++j) CHECK(ids(splits[i].train) != ids(splits[j].train));
  CHECK(train_overlap(splits).size() == 10);
}

TEST_CASE("insufficient examples name the label and the count") {
  std::vector<Example> examples;
  int dropped = 0;
  for (auto& e : pool(10))
    if (e.label != 1 || dropped++ >= 5) examples.push_back(e);
  try {
    sample_kshot(examples, LabelSet({"negative", "positive"}), 4, 1);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    CHECK(what.find("positive") != std::string::npos);
    CHECK(what.find('5') != std::string::npos);
  }
}

TEST_CASE("the split follows the documented engine procedure") {
  // Independent re-derivation: per label, Fisher-Yates with rejection-sampled
  // bounded draws from one mt19937_64.
  const auto examples = pool(12);
  std::mt19937_64 rng(77);
  std::vector<std::string> train, dev;
  for (int l = 0; l < 2; ++l) {
    std::vector<const Example*> group;
    for (const auto& e : examples)
      if (e.label == l) group.push_back(&e);
    for (std::size_t i = group.size() - 1; i > 0; --i) {
      const std::uint64_t bound = i + 1;
      const std::uint64_t limit = ~0ULL - (~0ULL % bound);
      std::uint64_t x;
      do x = rng(); while (x >= limit);
      std::swap(group[i], group[x % bound]);
    }
    for (int i = 0; i < 3; ++i) train.push_back(group[static_cast<std::size_t>(i)]->id);
    for (int i = 3; i < 6; ++i) dev.push_back(group[static_cast<std::size_t>(i)]->id);
  }
  auto s = sample_kshot(examples, LabelSet({"negative", "positive"}), 3, 77);
  std::vector<std::string> got_train, got_dev;
  for (const auto& e : s.train) got_train.push_back(e.id);
  for (const auto& e : s.dev) got_dev.push_back(e.id);
  CHECK(got_train == train);
  CHECK(got_dev == dev);
}

TEST_CASE("split manifest lists seeds and ids") {
  auto s = sample_kshot(pool(4), LabelSet({"negative", "positive"}), 1, 5);
  std::ostringstream out;
  write_split_manifest(out, {s});
  const auto text = out.str();
  CHECK(text.find("\"seed\"") != std::string::npos);
  CHECK(text.find(s.train[0].id) != std::string::npos);
}

}
