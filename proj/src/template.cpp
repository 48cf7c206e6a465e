#include "smprompt/template.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include "smprompt/error.hpp"

namespace smprompt {

namespace {

template <typename T>
bool any_of_kind(const std::vector<Segment>& segs) {
  return std::any_of(segs.begin(), segs.end(),
                     [](const Segment& s) { return std::holds_alternative<T>(s); });
}

bool ends_with_space(const std::string& s) {
  return !s.empty() && std::isspace(static_cast<unsigned char>(s.back()));
}

std::string decode_literal(const std::string& raw) {
  std::string out = raw;
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

const std::regex& sentence_token() {
  static const std::regex re(R"((\+)?sent([-l]*)_([01]))");
  return re;
}

Segment parse_marker(const std::string& token, Template& tpl) {
  if (token == "cls") {
    tpl.cls = true;
    return segment::Literal{};
  }
  if (token == "sep" || token == "sep+") {
    tpl.sep = true;
    return segment::Literal{};
  }
  if (token == "mask") return segment::Mask{};
  if (token == "dep") return segment::DepSlot{};
  if (token == "od") return segment::MetaBlock{MetaKind::OD};
  if (token == "sd") return segment::MetaBlock{MetaKind::SD};
  if (token == "td") return segment::MetaBlock{MetaKind::TD};
  std::smatch m;
  if (std::regex_match(token, m, sentence_token())) {
    segment::Sentence s;
    s.index = m[3].str()[0] - '0';
    const bool plus = m[1].matched;
    const auto flags = m[2].str();
    s.hints.space_before = plus;
    s.hints.lowercase_first = flags.find('l') != std::string::npos;
    s.hints.capitalize_first = plus && !s.hints.lowercase_first;
    s.hints.strip_trailing_punct = flags.find('-') != std::string::npos;
    return s;
  }
  throw ValidationError("unknown template token '*" + token + "*'");
}

}  // namespace

bool Template::has_dep_slot() const { return any_of_kind<segment::DepSlot>(segments); }
bool Template::has_meta() const { return any_of_kind<segment::MetaBlock>(segments); }
bool Template::has_mask() const { return any_of_kind<segment::Mask>(segments); }
bool Template::uses_sent1() const {
  return std::any_of(segments.begin(), segments.end(), [](const Segment& s) {
    auto* sent = std::get_if<segment::Sentence>(&s);
    return sent && sent->index == 1;
  });
}

Template parse_template(const std::string& notation) {
  if (notation.empty()) throw ValidationError("template notation is empty");
  Template tpl;
  tpl.source = notation;

  std::vector<Segment> raw;
  std::size_t i = 0;
  while (i < notation.size()) {
    if (notation[i] == '*') {
      auto close = notation.find('*', i + 1);
      if (close == std::string::npos)
        throw ValidationError("unterminated '*' at offset " + std::to_string(i));
      raw.push_back(parse_marker(notation.substr(i + 1, close - i - 1), tpl));
      i = close + 1;
    } else {
      auto next = notation.find('*', i);
      if (next == std::string::npos) next = notation.size();
      raw.push_back(segment::Literal{decode_literal(notation.substr(i, next - i))});
      i = next;
    }
  }

  int masks = 0;
  int deps = 0;
  for (auto& seg : raw) {
    if (auto* lit = std::get_if<segment::Literal>(&seg)) {
      if (lit->text.empty()) continue;
      if (!tpl.segments.empty())
        if (auto* prev = std::get_if<segment::Literal>(&tpl.segments.back())) {
          prev->text += lit->text;
          continue;
        }
      tpl.segments.push_back(seg);
      continue;
    }
    if (std::holds_alternative<segment::Mask>(seg)) {
      ++masks;
      if (!tpl.segments.empty()) {
        auto* prev = std::get_if<segment::Literal>(&tpl.segments.back());
        if (!prev)
          tpl.segments.push_back(segment::Literal{" "});
        else if (!ends_with_space(prev->text))
          prev->text += ' ';
      }
    }
    if (std::holds_alternative<segment::DepSlot>(seg)) ++deps;
    tpl.segments.push_back(seg);
  }

  if (masks > 1) throw ValidationError("template has " + std::to_string(masks) + " masks");
  const bool has_td = std::any_of(tpl.segments.begin(), tpl.segments.end(), [](const Segment& s) {
    auto* m = std::get_if<segment::MetaBlock>(&s);
    return m && m->kind == MetaKind::TD;
  });
  if (masks == 0 && !has_td)
    throw ValidationError("template has no *mask* (and no *td* block to carry one)");
  if (deps > 1) throw ValidationError("template has more than one *dep* slot");
  return tpl;
}

MetaKind parse_meta_kind(const std::string& name) {
  std::string up = name;
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "OD") return MetaKind::OD;
  if (up == "SD") return MetaKind::SD;
  if (up == "TD") return MetaKind::TD;
  throw ValidationError("unknown meta-prompt part '" + name + "' (expected OD, SD or TD)");
}

MetaPrompt compose_meta(const MetaPrompt& meta, const std::set<MetaKind>& parts) {
  MetaPrompt out;
  if (parts.count(MetaKind::OD)) out.od = meta.od;
  if (parts.count(MetaKind::SD)) out.sd = meta.sd;
  out.td = parts.count(MetaKind::TD) ? meta.td : kDefaultMetaTail;
  return out;
}

namespace {

enum class PieceKind { Fixed, Sentence, Dep, DepEnd };

struct Piece {
  PieceKind kind;
  std::string prefix;  // whitespace emitted before text
  std::string text;
  std::vector<TokenId> ids;
};

std::string normalize_mask_placeholders(std::string text) {
  static const std::regex re(R"(\[mask\]|\*mask\*)", std::regex::icase);
  return std::regex_replace(text, re, std::string(Tokenizer::kMaskText));
}

std::string apply_hints(std::string text, const SentHints& h) {
  auto rtrim = [&] {
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
  };
  if (h.strip_trailing_punct) {
    rtrim();
    if (!text.empty() && std::ispunct(static_cast<unsigned char>(text.back()))) text.pop_back();
    rtrim();
  }
  if (!text.empty()) {
    auto& c = text.front();
    if (h.lowercase_first)
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (h.capitalize_first)
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return text;
}

std::vector<Piece> build_pieces(const Template& tpl, const Example& ex, const RenderOptions& opt) {
  if (tpl.has_dep_slot() != (opt.dep != nullptr))
    throw ValidationError(tpl.has_dep_slot() ? "template has a *dep* slot but no snippet was given"
                                             : "dependency snippet given to a template without *dep*");
  if (tpl.has_meta() != (opt.meta != nullptr))
    throw ValidationError(tpl.has_meta() ? "template has meta blocks but no meta-prompt was given"
                                         : "meta-prompt given to a template without meta blocks");

  std::vector<Piece> pieces;
  std::string so_far;
  auto emit = [&](PieceKind kind, std::string prefix, std::string text) {
    so_far += prefix;
    so_far += text;
    pieces.push_back({kind, std::move(prefix), std::move(text), {}});
  };
  auto block_prefix = [&] { return so_far.empty() || ends_with_space(so_far) ? "" : " "; };

  for (const auto& seg : tpl.segments) {
    if (auto* lit = std::get_if<segment::Literal>(&seg)) {
      emit(PieceKind::Fixed, "", lit->text);
    } else if (auto* sent = std::get_if<segment::Sentence>(&seg)) {
      if (sent->index == 1 && !ex.sent1)
        throw ValidationError("template uses *sent_1* but example " + ex.id + " has one sentence");
      const auto& src = sent->index == 0 ? ex.sent0 : *ex.sent1;
      std::string prefix = sent->hints.space_before ? block_prefix() : "";
      emit(PieceKind::Sentence, prefix, apply_hints(src, sent->hints));
    } else if (std::holds_alternative<segment::Mask>(seg)) {
      emit(PieceKind::Fixed, "", std::string(Tokenizer::kMaskText));
    } else if (std::holds_alternative<segment::DepSlot>(seg)) {
      if (opt.dep->empty()) continue;
      std::string words;
      for (const auto& w : opt.dep->tokens) words += (words.empty() ? "" : " ") + w;
      emit(PieceKind::Dep, block_prefix(), words);
      emit(PieceKind::DepEnd, "", ".");
    } else if (auto* meta = std::get_if<segment::MetaBlock>(&seg)) {
      const auto& field = meta->kind == MetaKind::OD   ? opt.meta->od
                          : meta->kind == MetaKind::SD ? opt.meta->sd
                                                       : opt.meta->td;
      if (field.empty()) continue;
      emit(PieceKind::Fixed, block_prefix(), normalize_mask_placeholders(field));
    }
  }
  return pieces;
}

std::string join_pieces(const std::vector<Piece>& pieces) {
  std::string out;
  for (const auto& p : pieces) out += p.prefix + p.text;
  return out;
}

}  // namespace

std::string render_text(const Template& tpl, const Example& example, const RenderOptions& options) {
  return join_pieces(build_pieces(tpl, example, options));
}

RenderedInput render(const Template& tpl, const Example& example, const Tokenizer& tokenizer,
                     const RenderOptions& options) {
  auto pieces = build_pieces(tpl, example, options);
  const auto surface = join_pieces(pieces);
  if (surface.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ValidationError("rendered input for example " + example.id + " is empty");

  std::size_t total = (tpl.cls ? 1 : 0) + (tpl.sep ? 1 : 0);
  std::size_t masks = 0;
  for (auto& p : pieces) {
    p.ids = tokenizer.encode(p.text);
    total += p.ids.size();
    masks += static_cast<std::size_t>(std::count(p.ids.begin(), p.ids.end(), Tokenizer::kMask));
  }
  if (masks != 1)
    throw ValidationError("rendered input for example " + example.id + " has " +
                          std::to_string(masks) + " mask tokens, expected 1");

  std::size_t mask_piece = 0;
  while (std::find(pieces[mask_piece].ids.begin(), pieces[mask_piece].ids.end(),
                   Tokenizer::kMask) == pieces[mask_piece].ids.end())
    ++mask_piece;

  bool truncated = false;
  while (total > options.max_length) {
    // Sentence slots ahead of the mask go first so the cloze tail keeps its
    // distance from the end of the sequence.
    Piece* victim = nullptr;
    for (int pass = 0; pass < 2 && !victim; ++pass) {
      for (std::size_t i = 0; i < pieces.size(); ++i) {
        auto& p = pieces[i];
        if ((i < mask_piece) != (pass == 0)) continue;
        if (p.kind == PieceKind::Sentence && p.ids.size() > 1 &&
            (!victim || p.ids.size() >= victim->ids.size()))
          victim = &p;
      }
    }
    if (!victim)
      for (auto& p : pieces)
        if (p.kind == PieceKind::Dep && !p.ids.empty()) victim = &p;
    if (!victim)
      throw ValidationError("prompt for example " + example.id + " needs more than " +
                            std::to_string(options.max_length) + " tokens even fully truncated");
    victim->ids.pop_back();
    --total;
    truncated = true;
    if (victim->kind == PieceKind::Dep && victim->ids.empty()) {
      // An emptied snippet takes its terminator with it.
      victim->prefix.clear();
      victim->text.clear();
      auto end = std::find_if(pieces.begin(), pieces.end(),
                              [](const Piece& p) { return p.kind == PieceKind::DepEnd; });
      total -= end->ids.size();
      end->ids.clear();
      end->text.clear();
    } else {
      std::string text;
      for (auto id : victim->ids) text += (text.empty() ? "" : " ") + tokenizer.word(id);
      victim->text = std::move(text);
    }
  }

  RenderedInput out;
  out.truncated = truncated;
  out.text = join_pieces(pieces);
  if (tpl.cls) out.ids.push_back(Tokenizer::kCls);
  for (const auto& p : pieces) out.ids.insert(out.ids.end(), p.ids.begin(), p.ids.end());
  if (tpl.sep) out.ids.push_back(Tokenizer::kSep);
  auto mask = std::find(out.ids.begin(), out.ids.end(), Tokenizer::kMask);
  if (mask == out.ids.end()) throw Error("internal: mask lost during truncation");
  out.mask_position = static_cast<std::size_t>(mask - out.ids.begin());
  return out;
}

}  // namespace smprompt
