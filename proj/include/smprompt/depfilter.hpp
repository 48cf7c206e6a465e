#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "smprompt/corpus.hpp"

namespace smprompt {

enum class FilterKind { Pos, Dep };

struct Filter {
  FilterKind kind = FilterKind::Pos;
  std::string name;

  /// "POS:NN", "DEP:amod".
  std::string label() const;
  static Filter parse(const std::string& label);

  bool operator==(const Filter&) const = default;
};

/// The set of filters a run may use. Order is significant: it is the final
/// tie-breaker when ranking filters.
class FilterCatalog {
 public:
  FilterCatalog() = default;
  explicit FilterCatalog(std::vector<Filter> filters);

  /// Seven POS and five dependency filters. The POS group keeps the names
  /// amod, advmod and obj as given, though they are not POS tags.
  static FilterCatalog core();
  /// core() followed by WDT, NNP, WRB, WP and JJ.
  static FilterCatalog standard();
  /// One "KIND:name" entry per line; '#' starts a comment.
  static FilterCatalog load(const std::filesystem::path& path);

  bool contains(const Filter& f) const;
  std::size_t index_of(const Filter& f) const;
  const std::vector<Filter>& filters() const { return filters_; }
  std::size_t size() const { return filters_.size(); }

 private:
  std::vector<Filter> filters_;
};

struct DepSnippet {
  std::vector<std::string> tokens;
  Filter source;

  bool empty() const { return tokens.empty(); }
  bool operator==(const DepSnippet&) const = default;
};

constexpr int kDefaultSnippetTokens = 8;

/// POS filters keep every token whose tag equals the filter name. Dependency
/// filters walk the dependents in sentence order and, for each arc labelled
/// with the filter name, emit the dependent then its head; "ROOT" selects the
/// root token alone. Tokens are deduplicated by position and the result is
/// capped at `max_tokens`.
DepSnippet extract(const AnnotatedSentence& sentence, const Filter& filter, int max_tokens,
                   const FilterCatalog& catalog = FilterCatalog::standard());

}  // namespace smprompt
