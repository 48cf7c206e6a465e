#include "smprompt/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "smprompt/error.hpp"

namespace smprompt {

namespace {

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string::size_type start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  return in;
}

}  // namespace

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) throw ValidationError("a label set needs at least two labels");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ValidationError("label names must be non-empty");
    if (!seen.insert(n).second) throw ValidationError("duplicate label name: " + n);
  }
}

std::optional<LabelId> LabelSet::find(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<LabelId>(it - names_.begin());
}

Dataset parse_dataset(const std::filesystem::path& path, const TaskSchema& schema) {
  auto in = open_or_throw(path);
  return parse_dataset(in, schema);
}

Dataset parse_dataset(std::istream& in, const TaskSchema& schema) {
  if (schema.labels.size() < 2) throw ValidationError("task schema declares no label set");
  if (schema.sentence_pair && schema.sent1_column < 0)
    throw ValidationError("sentence-pair schema needs a sent1 column");
  if (!schema.label_codes.empty() && schema.label_codes.size() != schema.labels.size())
    throw ValidationError("label_codes must parallel the label names");

  const int columns = std::max({schema.sent0_column, schema.sent1_column, schema.label_column,
                                schema.id_column}) + 1;
  Dataset data{schema.labels, {}};
  std::string line;
  std::size_t line_no = 0;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (schema.header && line_no == 1) continue;
    if (line.empty()) continue;
    auto fields = split(line, schema.delimiter);
    if (static_cast<int>(fields.size()) < columns)
      throw ParseError("expected at least " + std::to_string(columns) + " columns, found " +
                           std::to_string(fields.size()),
                       line_no);

    const std::string& raw = fields[static_cast<std::size_t>(schema.label_column)];
    std::optional<LabelId> label;
    if (schema.label_codes.empty()) {
      label = schema.labels.find(raw);
    } else {
      auto it = std::find(schema.label_codes.begin(), schema.label_codes.end(), raw);
      if (it != schema.label_codes.end())
        label = static_cast<LabelId>(it - schema.label_codes.begin());
    }
    if (!label) throw ParseError("unknown label '" + raw + "'", line_no);

    Example ex;
    ex.id = schema.id_column >= 0 ? fields[static_cast<std::size_t>(schema.id_column)]
                                  : schema.name + "-" + std::to_string(row);
    ex.sent0 = fields[static_cast<std::size_t>(schema.sent0_column)];
    if (schema.sentence_pair) ex.sent1 = fields[static_cast<std::size_t>(schema.sent1_column)];
    ex.label = *label;
    data.examples.push_back(std::move(ex));
    ++row;
  }
  return data;
}

std::vector<AnnotatedSentence> parse_conllu(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_conllu(in);
}

namespace {

void close_sentence(std::vector<AnnotatedSentence>& out, AnnotatedSentence& current,
                    std::size_t line_no) {
  if (current.tokens.empty()) return;
  const int n = static_cast<int>(current.tokens.size());
  int roots = 0;
  for (const auto& t : current.tokens) {
    if (t.head < 0 || t.head > n) throw ParseError("head index out of range", line_no);
    if (t.head == 0) ++roots;
  }
  if (roots != 1)
    throw ParseError("sentence has " + std::to_string(roots) + " root tokens, expected 1",
                     line_no);
  out.push_back(std::move(current));
  current = {};
}

}  // namespace

std::vector<AnnotatedSentence> parse_conllu(std::istream& in) {
  std::vector<AnnotatedSentence> out;
  AnnotatedSentence current;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) {
      close_sentence(out, current, line_no);
      continue;
    }
    if (line[0] == '#') continue;
    auto fields = split(line, '\t');
    if (fields.size() != 10)
      throw ParseError("expected 10 tab-separated columns, found " + std::to_string(fields.size()),
                       line_no);
    const auto& id = fields[0];
    if (id.find('-') != std::string::npos || id.find('.') != std::string::npos) continue;

    Token tok;
    tok.form = fields[1];
    tok.pos = fields[4] != "_" ? fields[4] : fields[3];
    const auto& head = fields[6];
    auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), tok.head);
    if (ec != std::errc{} || ptr != head.data() + head.size())
      throw ParseError("non-integer head '" + head + "'", line_no);
    tok.deprel = fields[7];
    current.tokens.push_back(std::move(tok));
  }
  close_sentence(out, current, line_no);
  return out;
}

void write_conllu(std::ostream& out, const std::vector<AnnotatedSentence>& sentences) {
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      const auto& t = s.tokens[i];
      out << (i + 1) << '\t' << t.form << "\t_\t" << t.pos << '\t' << t.pos << "\t_\t" << t.head
          << '\t' << t.deprel << "\t_\t_\n";
    }
    out << '\n';
  }
}

ParseIndex align_parses(const std::vector<Example>& examples,
                        const std::vector<AnnotatedSentence>& sent0,
                        const std::vector<AnnotatedSentence>* sent1) {
  if (sent0.size() != examples.size())
    throw ValidationError("annotation count " + std::to_string(sent0.size()) +
                          " does not match example count " + std::to_string(examples.size()));
  if (sent1 && sent1->size() != examples.size())
    throw ValidationError("second-sentence annotation count " + std::to_string(sent1->size()) +
                          " does not match example count " + std::to_string(examples.size()));
  ParseIndex index;
  index.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    ExampleParse p{sent0[i], std::nullopt};
    if (sent1) p.sent1 = (*sent1)[i];
    index.emplace(examples[i].id, std::move(p));
  }
  return index;
}

KShotSplit sample_kshot(const std::vector<Example>& examples, const LabelSet& labels, int k,
                        std::uint64_t seed) {
  if (k < 1) throw ValidationError("k must be at least 1");
  std::vector<std::vector<std::size_t>> by_label(labels.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto label = examples[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= labels.size())
      throw ValidationError("example " + examples[i].id + " has label index out of range");
    by_label[static_cast<std::size_t>(label)].push_back(i);
  }
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (by_label[t].size() < static_cast<std::size_t>(2 * k))
      throw ValidationError("label '" + labels.name(static_cast<LabelId>(t)) + "' has " +
                            std::to_string(by_label[t].size()) + " examples, needs " +
                            std::to_string(2 * k));
  }

  std::mt19937_64 engine(seed);
  KShotSplit split{seed, k, {}, {}};
  for (auto& pool : by_label) {
    for (std::size_t i = pool.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform_below(engine, i + 1));
      std::swap(pool[i], pool[j]);
    }
    for (int i = 0; i < k; ++i) split.train.push_back(examples[pool[static_cast<std::size_t>(i)]]);
    for (int i = k; i < 2 * k; ++i) split.dev.push_back(examples[pool[static_cast<std::size_t>(i)]]);
  }
  return split;
}

std::vector<std::size_t> train_overlap(const std::vector<KShotSplit>& splits) {
  std::vector<std::unordered_set<std::string>> ids;
  for (const auto& s : splits) {
    std::unordered_set<std::string> set;
    for (const auto& e : s.train) set.insert(e.id);
    ids.push_back(std::move(set));
  }
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < splits.size(); ++a) {
    for (std::size_t b = a + 1; b < splits.size(); ++b) {
      std::size_t shared = 0;
      for (const auto& id : ids[a]) shared += ids[b].count(id);
      out.push_back(shared);
    }
  }
  return out;
}

void write_split_manifest(std::ostream& out, const std::vector<KShotSplit>& splits) {
  nlohmann::json doc;
  doc["splits"] = nlohmann::json::array();
  for (const auto& s : splits) {
    nlohmann::json entry;
    entry["seed"] = s.seed;
    entry["k"] = s.k;
    auto ids = [](const std::vector<Example>& v) {
      std::vector<std::string> r;
      for (const auto& e : v) r.push_back(e.id);
      return r;
    };
    entry["train"] = ids(s.train);
    entry["dev"] = ids(s.dev);
    doc["splits"].push_back(std::move(entry));
  }
  doc["train_overlap"] = train_overlap(splits);
  out << doc.dump(2) << '\n';
}

}  // namespace smprompt
