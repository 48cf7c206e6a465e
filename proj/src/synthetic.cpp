#include "smprompt/synthetic.hpp"

#include <fstream>
#include <random>

#include "smprompt/error.hpp"

namespace smprompt::synthetic {

namespace {

const std::vector<std::string> kNouns = {"film",  "story", "actor", "scene", "plot",  "music", "camera",
                                         "cast",  "script", "ending", "hero", "voice", "set",   "dialogue",
                                         "tone",  "pace",  "score", "lead",  "crew",  "light"};
const std::vector<std::string> kVerbs = {"had", "showed", "offered", "carried", "made", "found", "kept", "gave"};
const std::vector<std::string> kAdverbs = {"today", "again", "mostly", "often", "still"};
const std::vector<std::string> kNames = {"bob", "alice"};  // index = label it usually goes with
const std::vector<std::string> kSignals = {"bad", "good"};

struct Word {
  std::string form, pos, deprel;
  int head = 0;  // 1-based, filled by the builder
};

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
  return v[uniform_below(rng, v.size())];
}

AnnotatedSentence to_sentence(const std::vector<Word>& words) {
  AnnotatedSentence s;
  for (const auto& w : words) s.tokens.push_back({w.form, w.pos, w.head, w.deprel});
  return s;
}

std::string surface(const std::vector<Word>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w.form;
  }
  return out;
}

// "[adverb] the NOUN VERB a SIGNAL NOUN": VERB is the root, SIGNAL modifies
// the object noun.
std::vector<Word> signal_sentence(std::mt19937_64& rng, int label) {
  std::vector<Word> w;
  if (uniform_below(rng, 2)) w.push_back({pick(rng, kAdverbs), "RB", "advmod"});
  const int base = static_cast<int>(w.size());
  w.push_back({"the", "DT", "det", base + 2});
  w.push_back({pick(rng, kNouns), "NN", "nsubj"});
  w.push_back({pick(rng, kVerbs), "VBD", "ROOT", 0});
  w.push_back({"a", "DT", "det", base + 6});
  w.push_back({kSignals[static_cast<std::size_t>(label)], "JJ", "amod", base + 6});
  w.push_back({pick(rng, kNouns), "NN", "obj"});
  const int root = base + 3;
  for (auto& x : w)
    if (x.head == 0 && x.deprel != "ROOT") x.head = root;
  return w;
}

// Filler nouns under a root verb, then VBD / NNP / JJ at the very end.
std::vector<Word> filter_sentence(std::mt19937_64& rng, int label) {
  std::vector<Word> w;
  w.push_back({"the", "DT", "det", 2});
  w.push_back({pick(rng, kNouns), "NN", "nsubj", 3});
  w.push_back({"is", "VBZ", "ROOT", 0});
  for (int i = 0; i < 24; ++i) w.push_back({pick(rng, kNouns), "NN", "dep", 3});
  w.push_back({pick(rng, kVerbs), "VBD", "conj", 3});
  const bool name_agrees = uniform_below(rng, 4) != 0;
  w.push_back({kNames[static_cast<std::size_t>(name_agrees ? label : 1 - label)], "NNP", "nsubj",
               static_cast<int>(w.size())});
  w.push_back({kSignals[static_cast<std::size_t>(label)], "JJ", "xcomp", static_cast<int>(w.size()) - 1});
  return w;
}

template <typename Gen>
Task generate(const Options& o, Gen gen) {
  if (o.pool_per_label < 1 || o.test_per_label < 1) throw ValidationError("synthetic task sizes must be positive");
  Task t;
  t.data.name = o.name;
  t.data.labels = LabelSet({"negative", "positive"});
  std::mt19937_64 rng(o.seed);
  auto fill = [&](int per_label, const std::string& split, std::vector<Example>& examples,
                  std::vector<AnnotatedSentence>& parses) {
    for (int i = 0; i < per_label; ++i)
      for (int label = 0; label < 2; ++label) {
        auto words = gen(rng, label);
        Example e;
        e.id = o.name + "-" + split + "-" + std::to_string(examples.size());
        e.sent0 = surface(words);
        e.label = label;
        parses.push_back(to_sentence(words));
        t.data.parses[e.id] = ExampleParse{parses.back(), std::nullopt};
        examples.push_back(std::move(e));
      }
  };
  fill(o.pool_per_label, "pool", t.data.pool, t.pool_parses);
  fill(o.test_per_label, "test", t.data.test, t.test_parses);
  return t;
}

void write_tsv(const std::vector<Example>& examples, const LabelSet& labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : examples) out << e.sent0 << '\t' << labels.name(e.label) << '\n';
}

void write_parses(const std::vector<AnnotatedSentence>& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_conllu(out, s);
}

}  // namespace

Task signal_task(const Options& options) { return generate(options, signal_sentence); }

Task filter_task(const Options& options) { return generate(options, filter_sentence); }

std::vector<std::vector<std::string>> label_words() { return {{"terrible"}, {"great"}}; }

void write_task(const Task& task, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_tsv(task.data.pool, task.data.labels, dir / "pool.tsv");
  write_tsv(task.data.test, task.data.labels, dir / "test.tsv");
  write_parses(task.pool_parses, dir / "pool.conllu");
  write_parses(task.test_parses, dir / "test.conllu");
}

}  // namespace smprompt::synthetic
