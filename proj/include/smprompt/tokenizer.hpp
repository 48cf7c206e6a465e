#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace smprompt {

using TokenId = int;

/// Word-level tokenizer: splits on whitespace, every ASCII punctuation
/// character is its own token, special tokens ("[MASK]", "[CLS]", ...) are
/// recognised verbatim in any case. Unknown words map to the unknown id.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kMask = 4;
  static constexpr std::string_view kMaskText = "[MASK]";

  /// `words` are added after the five special tokens, in order, skipping
  /// duplicates.
  explicit Tokenizer(const std::vector<std::string>& words, bool lowercase = true);

  /// Vocabulary of every word occurring in `texts` (plus `extra`), sorted.
  static Tokenizer build(const std::vector<std::string>& texts,
                         const std::vector<std::string>& extra = {}, bool lowercase = true);
  static Tokenizer load(const std::filesystem::path& path, bool lowercase = true);
  void save(const std::filesystem::path& path) const;

  std::vector<std::string> split(std::string_view text) const;
  std::vector<TokenId> encode(std::string_view text) const;
  TokenId id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }

  std::size_t size() const { return words_.size(); }
  bool lowercase() const { return lowercase_; }

 private:
  std::string normalize(std::string_view word) const;

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
  bool lowercase_;
};

}  // namespace smprompt
