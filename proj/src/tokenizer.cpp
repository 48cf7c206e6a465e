#include "smprompt/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>

#include "smprompt/error.hpp"

namespace smprompt {

namespace {

constexpr std::array<std::string_view, 5> kSpecials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                       "[MASK]"};

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::toupper(static_cast<unsigned char>(x)) ==
                  std::toupper(static_cast<unsigned char>(y));
         });
}

std::string_view match_special(std::string_view text, std::size_t pos) {
  for (auto s : kSpecials) {
    if (text.size() - pos >= s.size() && iequals(text.substr(pos, s.size()), s)) return s;
  }
  return {};
}

}  // namespace

Tokenizer::Tokenizer(const std::vector<std::string>& words, bool lowercase)
    : lowercase_(lowercase) {
  for (auto s : kSpecials) {
    ids_.emplace(std::string(s), static_cast<TokenId>(words_.size()));
    words_.emplace_back(s);
  }
  for (const auto& w : words) {
    auto norm = normalize(w);
    if (norm.empty() || ids_.count(norm)) continue;
    ids_.emplace(norm, static_cast<TokenId>(words_.size()));
    words_.push_back(std::move(norm));
  }
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts,
                           const std::vector<std::string>& extra, bool lowercase) {
  Tokenizer probe({}, lowercase);
  std::set<std::string> vocab;
  for (const auto& t : texts)
    for (auto& w : probe.split(t)) vocab.insert(std::move(w));
  for (const auto& t : extra)
    for (auto& w : probe.split(t)) vocab.insert(std::move(w));
  for (auto s : kSpecials) vocab.erase(std::string(s));
  return Tokenizer({vocab.begin(), vocab.end()}, lowercase);
}

Tokenizer Tokenizer::load(const std::filesystem::path& path, bool lowercase) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open vocabulary file: " + path.string());
  std::vector<std::string> words;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no <= kSpecials.size()) {
      if (line != kSpecials[line_no - 1])
        throw ParseError("vocabulary must start with the special tokens", line_no);
      continue;
    }
    words.push_back(line);
  }
  return Tokenizer(words, lowercase);
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocabulary file: " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

std::string Tokenizer::normalize(std::string_view word) const {
  std::string out(word);
  if (lowercase_)
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> Tokenizer::split(std::string_view text) const {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(normalize(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '[') {
      auto special = match_special(text, i);
      if (!special.empty()) {
        flush();
        out.emplace_back(special);
        i += special.size();
        continue;
      }
    }
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(c));
    }
    ++i;
  }
  flush();
  return out;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  for (const auto& w : split(text)) {
    auto it = ids_.find(w);
    out.push_back(it == ids_.end() ? kUnk : it->second);
  }
  return out;
}

TokenId Tokenizer::id(std::string_view word) const {
  auto it = ids_.find(normalize(word));
  if (it == ids_.end()) {
    for (std::size_t i = 0; i < kSpecials.size(); ++i)
      if (iequals(word, kSpecials[i])) return static_cast<TokenId>(i);
    return kUnk;
  }
  return it->second;
}

bool Tokenizer::contains(std::string_view word) const { return id(word) != kUnk || iequals(word, "[UNK]"); }

}  // namespace smprompt
