#pragma once

#include <set>
#include <string>
#include <variant>
#include <vector>

#include "smprompt/corpus.hpp"
#include "smprompt/depfilter.hpp"
#include "smprompt/tokenizer.hpp"

namespace smprompt {

// Template notation
// -----------------
// A template is a string of literals and `*token*` markers:
//
//   *cls* *sep* *sep+*      sequence delimiters (added as [CLS] / [SEP] ids)
//   *mask*                  the cloze position
//   *sent_0* *sent_1*       input sentence slots, with optional hints:
//     +  in front (*+sent_0*)   put a space before the sentence and
//                               capitalise its first letter
//     l  after sent (*sentl_1*) lowercase the first letter (wins over +)
//     -  after sent (*sent-_0*) drop one trailing punctuation mark
//   *dep*                   the dependency snippet (rendered " w1 w2 ." )
//   *od* *sd* *td*          meta-prompt description blocks
//
// `_` inside literals is a space. A space is inserted in front of the mask
// whenever the text before it does not already end in whitespace; the parser
// folds that space into the preceding literal.

struct SentHints {
  bool space_before = false;
  bool capitalize_first = false;
  bool lowercase_first = false;
  bool strip_trailing_punct = false;

  bool operator==(const SentHints&) const = default;
};

enum class MetaKind { OD, SD, TD };

namespace segment {
struct Literal {
  std::string text;
  bool operator==(const Literal&) const = default;
};
struct Sentence {
  int index = 0;
  SentHints hints;
  bool operator==(const Sentence&) const = default;
};
struct Mask {
  bool operator==(const Mask&) const = default;
};
struct DepSlot {
  bool operator==(const DepSlot&) const = default;
};
struct MetaBlock {
  MetaKind kind = MetaKind::OD;
  bool operator==(const MetaBlock&) const = default;
};
}  // namespace segment

using Segment = std::variant<segment::Literal, segment::Sentence, segment::Mask, segment::DepSlot,
                             segment::MetaBlock>;

struct Template {
  std::vector<Segment> segments;
  std::string source;
  bool cls = false;
  bool sep = false;

  bool has_dep_slot() const;
  bool has_meta() const;
  bool has_mask() const;
  bool uses_sent1() const;
};

Template parse_template(const std::string& notation);

struct MetaPrompt {
  std::string od;
  std::string sd;
  std::string td;

  bool operator==(const MetaPrompt&) const = default;
};

/// Tail substituted for a blanked task description so the rendered input
/// still has its mask.
inline constexpr const char* kDefaultMetaTail = "[MASK]";

/// Keeps the selected fields and blanks the rest. When TD is not selected the
/// td field becomes kDefaultMetaTail.
MetaPrompt compose_meta(const MetaPrompt& meta, const std::set<MetaKind>& parts);
MetaKind parse_meta_kind(const std::string& name);

struct RenderedInput {
  std::vector<TokenId> ids;
  std::size_t mask_position = 0;
  bool truncated = false;
  std::string text;  // surface string (after truncation)
};

struct RenderOptions {
  const DepSnippet* dep = nullptr;
  const MetaPrompt* meta = nullptr;
  std::size_t max_length = 512;
};

/// Surface string only, before tokenisation and truncation.
std::string render_text(const Template& tpl, const Example& example,
                        const RenderOptions& options = {});

/// Renders and tokenises. Over-long inputs lose tokens from the right end of
/// the longest sentence slot ahead of the mask, then of slots after it (each
/// slot keeps at least one token), then from the dependency snippet. The prompt literals and the mask are never
/// removed; if they alone exceed the budget this throws.
RenderedInput render(const Template& tpl, const Example& example, const Tokenizer& tokenizer,
                     const RenderOptions& options = {});

}  // namespace smprompt
