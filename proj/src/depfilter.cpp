#include "smprompt/depfilter.hpp"

#include <algorithm>
#include <fstream>

#include "smprompt/error.hpp"

namespace smprompt {

std::string Filter::label() const { return (kind == FilterKind::Pos ? "POS:" : "DEP:") + name; }

Filter Filter::parse(const std::string& label) {
  auto colon = label.find(':');
  if (colon == std::string::npos || colon + 1 == label.size())
    throw ValidationError("filter must look like POS:<tag> or DEP:<relation>, got '" + label + "'");
  auto kind = label.substr(0, colon);
  for (auto& c : kind) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (kind == "POS") return {FilterKind::Pos, label.substr(colon + 1)};
  if (kind == "DEP") return {FilterKind::Dep, label.substr(colon + 1)};
  throw ValidationError("unknown filter kind '" + kind + "'");
}

FilterCatalog::FilterCatalog(std::vector<Filter> filters) : filters_(std::move(filters)) {
  for (std::size_t i = 0; i < filters_.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (filters_[i] == filters_[j])
        throw ValidationError("duplicate filter in catalog: " + filters_[i].label());
}

FilterCatalog FilterCatalog::core() {
  std::vector<Filter> f;
  for (const char* n : {"amod", "advmod", "obj", "NN", "VBD", "VBZ", "VB"})
    f.push_back({FilterKind::Pos, n});
  for (const char* n : {"amod", "advmod", "ROOT", "obj", "nsubj"})
    f.push_back({FilterKind::Dep, n});
  return FilterCatalog(std::move(f));
}

FilterCatalog FilterCatalog::standard() {
  auto f = core().filters_;
  for (const char* n : {"WDT", "NNP", "WRB", "WP", "JJ"}) f.push_back({FilterKind::Pos, n});
  return FilterCatalog(std::move(f));
}

FilterCatalog FilterCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open filter catalog: " + path.string());
  std::vector<Filter> f;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    try {
      f.push_back(Filter::parse(line));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return FilterCatalog(std::move(f));
}

bool FilterCatalog::contains(const Filter& f) const {
  return std::find(filters_.begin(), filters_.end(), f) != filters_.end();
}

std::size_t FilterCatalog::index_of(const Filter& f) const {
  auto it = std::find(filters_.begin(), filters_.end(), f);
  if (it == filters_.end()) throw ValidationError("filter not in catalog: " + f.label());
  return static_cast<std::size_t>(it - filters_.begin());
}

DepSnippet extract(const AnnotatedSentence& sentence, const Filter& filter, int max_tokens,
                   const FilterCatalog& catalog) {
  if (max_tokens < 1) throw ValidationError("max_tokens must be at least 1");
  if (!catalog.contains(filter)) throw ValidationError("filter not in catalog: " + filter.label());

  const auto& toks = sentence.tokens;
  std::vector<std::size_t> picked;
  auto take = [&](std::size_t i) {
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
  };

  if (filter.kind == FilterKind::Pos) {
    for (std::size_t i = 0; i < toks.size(); ++i)
      if (toks[i].pos == filter.name) take(i);
  } else if (filter.name == "ROOT") {
    for (std::size_t i = 0; i < toks.size(); ++i)
      if (toks[i].head == 0) take(i);
  } else {
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (toks[i].deprel != filter.name || toks[i].head == 0) continue;
      take(i);
      take(static_cast<std::size_t>(toks[i].head - 1));
    }
  }

  DepSnippet out{{}, filter};
  for (std::size_t i = 0; i < picked.size() && static_cast<int>(i) < max_tokens; ++i)
    out.tokens.push_back(toks[picked[i]].form);
  return out;
}

}  // namespace smprompt
