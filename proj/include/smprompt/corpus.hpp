#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace smprompt {

using LabelId = int;

/// Ordered, unique label names. Order is the schema's declaration order and
/// fixes the label indices used everywhere downstream.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(LabelId id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<LabelId> find(const std::string& name) const;

  bool operator==(const LabelSet&) const = default;

 private:
  std::vector<std::string> names_;
};

struct Example {
  std::string id;
  std::string sent0;
  std::optional<std::string> sent1;
  LabelId label = 0;

  bool operator==(const Example&) const = default;
};

/// Column layout of a delimited dataset file. Column indices are 0-based.
struct TaskSchema {
  std::string name;
  bool sentence_pair = false;
  char delimiter = '\t';
  bool header = false;
  int sent0_column = 0;
  int sent1_column = -1;
  int label_column = 1;
  int id_column = -1;  // -1: ids are "<name>-<row>"
  LabelSet labels;
  // Raw label values as they appear in the file, parallel to labels. Empty
  // means the file carries label names.
  std::vector<std::string> label_codes;
};

struct Dataset {
  LabelSet labels;
  std::vector<Example> examples;
};

Dataset parse_dataset(const std::filesystem::path& path, const TaskSchema& schema);
Dataset parse_dataset(std::istream& in, const TaskSchema& schema);

struct Token {
  std::string form;
  std::string pos;
  int head = 0;  // 1-based index of the head token, 0 for the root
  std::string deprel;

  bool operator==(const Token&) const = default;
};

struct AnnotatedSentence {
  std::vector<Token> tokens;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const AnnotatedSentence&) const = default;
};

/// Reads CoNLL-U. The POS kept is XPOS (column 5) when present, else UPOS.
/// Comment lines, multiword ranges ("2-3") and empty nodes ("2.1") are
/// skipped.
std::vector<AnnotatedSentence> parse_conllu(const std::filesystem::path& path);
std::vector<AnnotatedSentence> parse_conllu(std::istream& in);
void write_conllu(std::ostream& out, const std::vector<AnnotatedSentence>& sentences);

/// Per-example parses, aligned with dataset rows (sentence i <-> example i).
struct ExampleParse {
  AnnotatedSentence sent0;
  std::optional<AnnotatedSentence> sent1;
};
using ParseIndex = std::unordered_map<std::string, ExampleParse>;

ParseIndex align_parses(const std::vector<Example>& examples,
                        const std::vector<AnnotatedSentence>& sent0,
                        const std::vector<AnnotatedSentence>* sent1 = nullptr);

struct KShotSplit {
  std::uint64_t seed = 0;
  int k = 0;
  std::vector<Example> train;
  std::vector<Example> dev;
};

/// Per label, in label order: gather that label's examples in input order,
/// Fisher-Yates shuffle them, then take the first k as train and the next k
/// as dev. One mt19937_64 engine seeded with `seed` drives the whole split;
/// bounded draws use `uniform_below`, so splits are reproducible by any
/// implementation of the standard engine.
KShotSplit sample_kshot(const std::vector<Example>& examples, const LabelSet& labels, int k,
                        std::uint64_t seed);

/// Unbiased draw from [0, bound) by rejection on raw 64-bit engine output.
template <typename Engine>
std::uint64_t uniform_below(Engine& engine, std::uint64_t bound) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x = engine();
  while (x >= limit) x = engine();
  return x % bound;
}

/// Pairwise count of shared train ids between splits, upper triangle,
/// row-major: (0,1), (0,2), ..., (1,2), ...
std::vector<std::size_t> train_overlap(const std::vector<KShotSplit>& splits);

void write_split_manifest(std::ostream& out, const std::vector<KShotSplit>& splits);

}  // namespace smprompt
