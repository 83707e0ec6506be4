#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "scenediff/scene_model.hpp"

namespace scenediff {

/// (subject category, relation, object category).
struct Triplet {
  int subject = 0;
  Relation relation = Relation::kNone;
  int object = 0;
  bool operator==(const Triplet&) const = default;
};

inline constexpr int kAnyCode = -1;

/// Target code signature, optionally restricted to one category.
/// A position holding kAnyCode matches every code.
struct StyleConstraint {
  std::optional<int> category;
  std::vector<int> codes;
  bool operator==(const StyleConstraint&) const = default;

  bool matches(std::span<const int> node_codes) const {
    if (node_codes.size() != codes.size()) return false;
    for (std::size_t m = 0; m < codes.size(); ++m)
      if (codes[m] != kAnyCode && codes[m] != node_codes[m]) return false;
    return true;
  }
};

struct Instruction {
  std::vector<Triplet> triplets;
  std::optional<StyleConstraint> style;
  std::string text;

  bool unconditional() const { return triplets.empty() && !style; }

  /// Content equality; the rendered text is not compared.
  bool operator==(const Instruction& o) const { return triplets == o.triplets && style == o.style; }
};

inline constexpr int kMaxTriplets = 2;

inline void validate_instruction(const Instruction& in, const SceneConfig& cfg) {
  require(in.triplets.size() <= kMaxTriplets, "instruction has more than two triplets");
  for (const auto& t : in.triplets)
    require(t.subject >= 0 && t.subject < cfg.num_categories && t.object >= 0 && t.object < cfg.num_categories,
            "instruction triplet category out of vocabulary");
  if (in.style) {
    require(static_cast<int>(in.style->codes.size()) == cfg.codes_per_object, "style has wrong number of codes");
    for (int c : in.style->codes)
      require(c == kAnyCode || (c >= 0 && c < cfg.codebook_size), "style code out of range");
    if (in.style->category)
      require(*in.style->category >= 0 && *in.style->category < cfg.num_categories,
              "style category out of vocabulary");
  }
}

/// Template grammar for instruction text. Loaded from a line-oriented file:
///   verb <word...>
///   relation <label> | <phrase>
///   clause <template using {verb} {cat} {rel}>
///   join <conjunction, a leading '.' starts a new sentence>
///   style <template using {cat} and/or {style}>
/// '#' starts a comment line.
class Grammar {
 public:
  std::vector<std::string> verbs;
  std::array<std::string, kNumRelations> relation_phrases{};
  std::vector<std::string> clauses;
  std::vector<std::string> joins;
  std::string category_style;  // template containing {cat}
  std::string room_style;      // template without {cat}

  static Grammar parse(std::string_view text) {
    Grammar g;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto trimmed = trim(line);
      if (trimmed.empty() || trimmed.front() == '#') continue;
      const auto sp = trimmed.find(' ');
      const std::string head = trimmed.substr(0, sp);
      const std::string rest = sp == std::string::npos ? "" : trim(trimmed.substr(sp + 1));
      require(!rest.empty(), "grammar line " + std::to_string(lineno) + ": missing payload");
      if (head == "verb") {
        g.verbs.push_back(rest);
      } else if (head == "relation") {
        const auto bar = rest.find('|');
        require(bar != std::string::npos, "grammar line " + std::to_string(lineno) + ": relation needs '|'");
        const auto label = relation_from_name(trim(rest.substr(0, bar)));
        require(label.has_value(), "grammar line " + std::to_string(lineno) + ": unknown relation label");
        g.relation_phrases[static_cast<int>(*label)] = trim(rest.substr(bar + 1));
      } else if (head == "clause") {
        g.clauses.push_back(rest);
      } else if (head == "join") {
        g.joins.push_back(rest);
      } else if (head == "style") {
        (rest.find("{cat}") != std::string::npos ? g.category_style : g.room_style) = rest;
      } else if (head != "version") {
        throw InvalidArgument("grammar line " + std::to_string(lineno) + ": unknown directive '" + head + "'");
      }
    }
    require(!g.verbs.empty() && !g.clauses.empty() && !g.joins.empty(), "grammar needs verbs, clauses and joins");
    for (const auto& p : g.relation_phrases) require(!p.empty(), "grammar must define a phrase for every relation");
    require(!g.category_style.empty() && !g.room_style.empty(), "grammar needs both style templates");
    return g;
  }

  static Grammar load(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open grammar file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  static std::string_view default_text() {
    return R"(# Instruction grammar.
version 1
verb Place
verb Put
verb Add
verb Position
verb Set up
relation left of | to the left of
relation right of | to the right of
relation in front of | in front of
relation behind | behind
relation closely left of | closely to the left of
relation closely right of | closely to the right of
relation closely in front of | closely in front of
relation closely behind | closely behind
relation above | above
relation below | below
relation none | far away from
clause {verb} a {cat} {rel} a {cat}
join . Then
join and
style Make the {cat} {style}
style Let the room be {style} style
)";
  }

  static const Grammar& builtin() {
    static const Grammar g = parse(default_text());
    return g;
  }

  static std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
  }
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size()))
    s.replace(p, from.size(), to);
  return s;
}

inline bool starts_with_vowel(std::string_view w) {
  return !w.empty() && std::string_view("aeiouAEIOU").find(w.front()) != std::string_view::npos;
}

/// Replaces the article "a" with "an" before vowel-initial words.
inline std::string fix_articles(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string w = words[i];
    if ((w == "a" || w == "A") && i + 1 < words.size() && starts_with_vowel(words[i + 1])) w += "n";
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

inline std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::string style_token(std::span<const int> codes) {
  std::string out = "pattern";
  for (int c : codes) out += c == kAnyCode ? std::string("-x") : "-" + std::to_string(c);
  return out;
}

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(lower(cur));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == '.' || c == ',') {
      flush();
      out.emplace_back(1, c);
    } else {
      cur += c;
    }
  }
  flush();
  return out;
}

}  // namespace detail

/// Renders an instruction with the template grammar. Verb and conjunction
/// choices are drawn from `seed`.
inline std::string render_instruction(const Instruction& instr, const SceneConfig& cfg, std::uint64_t seed,
                                      const Grammar& grammar = Grammar::builtin()) {
  validate_instruction(instr, cfg);
  Rng rng(seed);
  auto clause = [&](const Triplet& t) {
    std::string s = grammar.clauses[rng.index(grammar.clauses.size())];
    s = detail::replace_all(s, "{verb}", detail::lower(grammar.verbs[rng.index(grammar.verbs.size())]));
    s = detail::replace_all(s, "{rel}", grammar.relation_phrases[static_cast<int>(t.relation)]);
    const auto first = s.find("{cat}");
    s.replace(first, 5, cfg.category_names[t.subject]);
    const auto second = s.find("{cat}");
    s.replace(second, 5, cfg.category_names[t.object]);
    return s;
  };

  std::vector<std::string> sentences;
  if (!instr.triplets.empty()) {
    std::string s = detail::capitalize(clause(instr.triplets[0]));
    if (instr.triplets.size() == 2) {
      const std::string join = grammar.joins[rng.index(grammar.joins.size())];
      const std::string second = clause(instr.triplets[1]);
      if (join.front() == '.') {
        s += ". " + detail::capitalize(Grammar::trim(join.substr(1))) + " " + second;
      } else {
        s += " " + join + " " + second;
      }
    }
    sentences.push_back(s + ".");
  }
  if (instr.style) {
    const auto token = detail::style_token(instr.style->codes);
    std::string s;
    if (instr.style->category) {
      s = detail::replace_all(grammar.category_style, "{cat}", cfg.category_names[*instr.style->category]);
    } else {
      s = grammar.room_style;
    }
    sentences.push_back(detail::capitalize(detail::replace_all(s, "{style}", token)) + ".");
  }
  std::string out;
  for (const auto& s : sentences) out += (out.empty() ? "" : " ") + detail::fix_articles(s);
  return out;
}

namespace detail {

enum class Slot { kLiteral, kArticle, kVerb, kCategory, kRelation, kStyle, kOptionalPeriod };

struct Element {
  Slot slot;
  std::string literal;
};

struct ParseState {
  std::vector<int> categories;
  std::vector<Relation> relations;
  std::vector<int> style_codes;
};

struct ParseFailure {
  std::size_t position = 0;
  Slot expected = Slot::kLiteral;
};

class InstructionParser {
 public:
  InstructionParser(const SceneConfig& cfg, const Grammar& g) : cfg_(cfg) {
    for (const auto& v : g.verbs) verbs_.push_back(tokenize(v));
    for (const auto& name : cfg.category_names) categories_.push_back(tokenize(name));
    for (const auto& p : g.relation_phrases) relations_.push_back(tokenize(p));
    for (const auto& c : g.clauses) clauses_.push_back(compile(c));
    for (const auto& j : g.joins) joins_.push_back(compile(j));
    category_style_ = compile(g.category_style);
    room_style_ = compile(g.room_style);
  }

  Instruction parse(const std::string& text) {
    tokens_ = tokenize(text);
    Instruction out;
    out.text = text;
    if (tokens_.empty()) return out;

    // Structural alternatives: up to two clauses, then an optional style sentence.
    std::vector<std::pair<std::vector<Element>, int>> layouts;  // elements, style kind (0 none,1 cat,2 room)
    std::vector<std::vector<Element>> clause_parts{{}};
    for (const auto& c1 : clauses_) {
      clause_parts.push_back(concat({c1, {{Slot::kOptionalPeriod, ""}}}));
      for (const auto& j : joins_)
        for (const auto& c2 : clauses_) clause_parts.push_back(concat({c1, j, c2, {{Slot::kOptionalPeriod, ""}}}));
    }
    for (const auto& cp : clause_parts) {
      if (!cp.empty()) layouts.emplace_back(cp, 0);
      layouts.emplace_back(concat({cp, category_style_, {{Slot::kOptionalPeriod, ""}}}), 1);
      layouts.emplace_back(concat({cp, room_style_, {{Slot::kOptionalPeriod, ""}}}), 2);
    }

    for (const auto& [elements, style_kind] : layouts) {
      ParseState st;
      if (!match(elements, 0, 0, st)) continue;
      const std::size_t style_cats = style_kind == 1 ? 1 : 0;
      const std::size_t ntrip = (st.categories.size() - style_cats) / 2;
      for (std::size_t i = 0; i < ntrip; ++i)
        out.triplets.push_back({st.categories[2 * i], st.relations[i], st.categories[2 * i + 1]});
      if (style_kind != 0) {
        StyleConstraint sc;
        sc.codes = st.style_codes;
        if (style_kind == 1) sc.category = st.categories.back();
        out.style = sc;
      }
      return out;
    }
    throw InvalidArgument(diagnose());
  }

 private:
  static std::vector<Element> concat(std::initializer_list<std::vector<Element>> parts) {
    std::vector<Element> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  }

  static std::vector<Element> compile(const std::string& tmpl) {
    std::vector<Element> out;
    for (const auto& tok : tokenize(tmpl)) {
      if (tok == "{verb}") out.push_back({Slot::kVerb, ""});
      else if (tok == "{cat}") out.push_back({Slot::kCategory, ""});
      else if (tok == "{rel}") out.push_back({Slot::kRelation, ""});
      else if (tok == "{style}") out.push_back({Slot::kStyle, ""});
      else if (tok == "a" || tok == "an") out.push_back({Slot::kArticle, ""});
      else out.push_back({Slot::kLiteral, tok});
    }
    return out;
  }

  bool prefix_at(const std::vector<std::string>& words, std::size_t pos) const {
    if (pos + words.size() > tokens_.size()) return false;
    for (std::size_t i = 0; i < words.size(); ++i)
      if (tokens_[pos + i] != words[i]) return false;
    return true;
  }

  void fail(std::size_t pos, Slot s) {
    if (pos > failure_.position || (pos == failure_.position && s > failure_.expected)) failure_ = {pos, s};
  }

  std::optional<std::vector<int>> style_codes(const std::string& tok) const {
    if (tok.rfind("pattern-", 0) != 0) return std::nullopt;
    std::vector<int> codes;
    std::istringstream in(tok.substr(8));
    for (std::string part; std::getline(in, part, '-');) {
      if (part == "x") {
        codes.push_back(kAnyCode);
        continue;
      }
      if (part.empty() || !std::all_of(part.begin(), part.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        return std::nullopt;
      const int v = std::stoi(part);
      if (v >= cfg_.codebook_size) return std::nullopt;
      codes.push_back(v);
    }
    if (static_cast<int>(codes.size()) != cfg_.codes_per_object) return std::nullopt;
    return codes;
  }

  bool match(const std::vector<Element>& el, std::size_t ei, std::size_t ti, ParseState& st) {
    if (ei == el.size()) {
      if (ti == tokens_.size()) return true;
      fail(ti, Slot::kLiteral);
      return false;
    }
    const Element& e = el[ei];
    switch (e.slot) {
      case Slot::kLiteral:
        if (ti < tokens_.size() && tokens_[ti] == e.literal) return match(el, ei + 1, ti + 1, st);
        fail(ti, Slot::kLiteral);
        return false;
      case Slot::kOptionalPeriod:
        if (ti < tokens_.size() && tokens_[ti] == "." && match(el, ei + 1, ti + 1, st)) return true;
        return match(el, ei + 1, ti, st);
      case Slot::kArticle:
        if (ti < tokens_.size() && (tokens_[ti] == "a" || tokens_[ti] == "an")) return match(el, ei + 1, ti + 1, st);
        fail(ti, Slot::kArticle);
        return false;
      case Slot::kVerb:
        for (const auto& v : verbs_)
          if (prefix_at(v, ti) && match(el, ei + 1, ti + v.size(), st)) return true;
        fail(ti, Slot::kVerb);
        return false;
      case Slot::kCategory:
        for (std::size_t c = 0; c < categories_.size(); ++c) {
          if (!prefix_at(categories_[c], ti)) continue;
          st.categories.push_back(static_cast<int>(c));
          if (match(el, ei + 1, ti + categories_[c].size(), st)) return true;
          st.categories.pop_back();
        }
        fail(ti, Slot::kCategory);
        return false;
      case Slot::kRelation:
        for (std::size_t r = 0; r < relations_.size(); ++r) {
          if (!prefix_at(relations_[r], ti)) continue;
          st.relations.push_back(static_cast<Relation>(r));
          if (match(el, ei + 1, ti + relations_[r].size(), st)) return true;
          st.relations.pop_back();
        }
        fail(ti, Slot::kRelation);
        return false;
      case Slot::kStyle:
        if (ti < tokens_.size()) {
          if (auto codes = style_codes(tokens_[ti])) {
            st.style_codes = *codes;
            if (match(el, ei + 1, ti + 1, st)) return true;
            st.style_codes.clear();
          }
        }
        fail(ti, Slot::kStyle);
        return false;
    }
    return false;
  }

  std::string diagnose() const {
    const std::string near = failure_.position < tokens_.size() ? tokens_[failure_.position] : "<end>";
    switch (failure_.expected) {
      case Slot::kCategory: return "unknown category '" + near + "' in instruction";
      case Slot::kRelation: return "unknown relation phrase at '" + near + "' in instruction";
      case Slot::kVerb: return "unknown verb '" + near + "' in instruction";
      case Slot::kStyle: return "invalid style token '" + near + "' in instruction";
      default: return "unparseable instruction near '" + near + "'";
    }
  }

  const SceneConfig& cfg_;
  std::vector<std::vector<std::string>> verbs_, categories_, relations_;
  std::vector<std::vector<Element>> clauses_, joins_;
  std::vector<Element> category_style_, room_style_;
  std::vector<std::string> tokens_;
  ParseFailure failure_;
};

}  // namespace detail

/// Inverts `render_instruction`. Matching is case-insensitive; text outside
/// the grammar, unknown categories and unknown relation phrases are errors.
inline Instruction parse_instruction(const std::string& text, const SceneConfig& cfg,
                                     const Grammar& grammar = Grammar::builtin()) {
  detail::InstructionParser parser(cfg, grammar);
  return parser.parse(text);
}

inline bool triplet_realized(const SemanticGraph& g, const Triplet& t) {
  for (int j = 0; j < g.nodes(); ++j) {
    if (g.category(j) != t.subject) continue;
    for (int k = 0; k < g.nodes(); ++k)
      if (k != j && g.category(k) == t.object && g.directed_relation(j, k) == static_cast<int>(t.relation))
        return true;
  }
  return false;
}

inline bool style_realized(const SemanticGraph& g, const StyleConstraint& style) {
  int constrained = 0;
  for (int j = 0; j < g.nodes(); ++j) {
    if (g.is_empty_node(j)) continue;
    if (style.category && g.category(j) != *style.category) continue;
    ++constrained;
    if (!style.matches(g.codes(j))) return false;
  }
  return constrained > 0;
}

/// True when every triplet is realized by some node pair and the style
/// constraint holds on every constrained node. Triplets are conjunctive.
inline bool instruction_matches(const SemanticGraph& g, const Instruction& instr) {
  require(!g.has_mask(), "instruction_matches: graph contains mask states");
  for (const auto& t : instr.triplets)
    if (!triplet_realized(g, t)) return false;
  return !instr.style || style_realized(g, *instr.style);
}

}  // namespace scenediff
