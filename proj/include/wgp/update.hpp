#pragma once

// Update expressions and their flattening into semantic units.
//
//   expr    := term (';' term)*
//   term    := segment ('.' segment)*
//   segment := atom | '(' expr ')' | '[#' expr ']' | '[!' expr ']'
//
// A bracketed segment directly following another segment is read as if a
// '.' separated them ("place([# ...])"); the serializer always writes the
// '.'.

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "wgp/error.hpp"

namespace wgp {

struct UpdateExpr;

struct Segment {
  enum class Kind { Atom, Group, Ground, Focus };
  Kind kind = Kind::Atom;
  std::string atom;
  std::vector<UpdateExpr> inner;  // exactly one element unless kind == Atom

  static Segment make_atom(std::string a) { return Segment{Kind::Atom, std::move(a), {}}; }
  static Segment wrap(Kind k, UpdateExpr e);
};

struct Term {
  std::vector<Segment> segments;
};

/// Conjunction of terms; no terms is the empty update.
struct UpdateExpr {
  std::vector<Term> terms;
  bool empty() const { return terms.empty(); }

  static UpdateExpr atom(std::string a) {
    UpdateExpr e;
    e.terms.push_back(Term{{Segment::make_atom(std::move(a))}});
    return e;
  }
};

inline Segment Segment::wrap(Kind k, UpdateExpr e) {
  Segment s;
  s.kind = k;
  s.inner.push_back(std::move(e));
  return s;
}

inline bool operator==(const UpdateExpr& a, const UpdateExpr& b);
inline bool operator==(const Segment& a, const Segment& b) {
  return a.kind == b.kind && a.atom == b.atom && a.inner == b.inner;
}
inline bool operator==(const Term& a, const Term& b) { return a.segments == b.segments; }
inline bool operator==(const UpdateExpr& a, const UpdateExpr& b) { return a.terms == b.terms; }

/// Sequential composition with ';', skipping empty operands.
inline UpdateExpr conjoin(const UpdateExpr& a, const UpdateExpr& b) {
  UpdateExpr out = a;
  out.terms.insert(out.terms.end(), b.terms.begin(), b.terms.end());
  return out;
}

// ---------------------------------------------------------------------------
// text form

inline void write_update(const UpdateExpr& e, std::string& out);

inline void write_segment(const Segment& s, std::string& out) {
  switch (s.kind) {
    case Segment::Kind::Atom:
      out += s.atom;
      return;
    case Segment::Kind::Group:
      out += '(';
      break;
    case Segment::Kind::Ground:
      out += "[# ";
      break;
    case Segment::Kind::Focus:
      out += "[! ";
      break;
  }
  write_update(s.inner.front(), out);
  out += s.kind == Segment::Kind::Group ? ')' : ']';
}

inline void write_update(const UpdateExpr& e, std::string& out) {
  for (std::size_t i = 0; i < e.terms.size(); ++i) {
    if (i) out += ';';
    const auto& segs = e.terms[i].segments;
    for (std::size_t j = 0; j < segs.size(); ++j) {
      if (j) out += '.';
      write_segment(segs[j], out);
    }
  }
}

inline std::string to_string(const UpdateExpr& e) {
  std::string out;
  write_update(e, out);
  return out;
}

namespace detail {

class UpdateParser {
 public:
  explicit UpdateParser(std::string_view text) : text_(text) {}

  UpdateExpr parse_all() {
    skip();
    if (pos_ == text_.size()) return {};
    UpdateExpr e = expr();
    skip();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  static bool is_delim(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '.' || c == ';' || c == '(' ||
           c == ')' || c == '[' || c == ']';
  }
  void skip() {
    while (pos_ < text_.size() &&
           (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' || text_[pos_] == '\r'))
      ++pos_;
  }
  char peek() {
    skip();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("update syntax error at position " + std::to_string(pos_ + 1) + ": " + what);
  }

  UpdateExpr expr() {
    UpdateExpr e;
    e.terms.push_back(term());
    while (peek() == ';') {
      ++pos_;
      e.terms.push_back(term());
    }
    return e;
  }

  Term term() {
    Term t;
    t.segments.push_back(segment());
    while (true) {
      char c = peek();
      if (c == '.') {
        ++pos_;
        t.segments.push_back(segment());
      } else if (c == '(' || c == '[') {
        t.segments.push_back(segment());
      } else {
        break;
      }
    }
    return t;
  }

  Segment segment() {
    char c = peek();
    if (c == '(') {
      ++pos_;
      UpdateExpr inner = expr();
      if (peek() != ')') fail("expected ')'");
      ++pos_;
      return Segment::wrap(Segment::Kind::Group, std::move(inner));
    }
    if (c == '[') {
      ++pos_;
      Segment::Kind k;
      if (pos_ < text_.size() && text_[pos_] == '#')
        k = Segment::Kind::Ground;
      else if (pos_ < text_.size() && text_[pos_] == '!')
        k = Segment::Kind::Focus;
      else
        fail("expected '#' or '!' after '['");
      ++pos_;
      UpdateExpr inner = expr();
      if (peek() != ']') fail("expected ']'");
      ++pos_;
      return Segment::wrap(k, std::move(inner));
    }
    std::size_t b = pos_;
    while (pos_ < text_.size() && !is_delim(text_[pos_])) ++pos_;
    if (pos_ == b) fail(c ? "unexpected '" + std::string(1, c) + "'" : "unexpected end of input");
    return Segment::make_atom(std::string(text_.substr(b, pos_ - b)));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Empty or all-whitespace text is the empty update.
inline UpdateExpr parse_update(std::string_view text) { return detail::UpdateParser(text).parse_all(); }

// ---------------------------------------------------------------------------
// semantic units

struct SemanticUnit {
  std::string function;
  std::string slot;
  std::string value;
  auto operator<=>(const SemanticUnit&) const = default;
};

inline std::string to_string(const SemanticUnit& u) {
  return '<' + u.function + ' ' + u.slot + ' ' + u.value + '>';
}

/// Slot naming data for the flattening. Leading segments in `dropped` are
/// removed, then the longest dotted prefix found in `aliases` is replaced by
/// its alias and the remaining segments are appended with `joiner`.
struct SlotAliases {
  std::set<std::string> dropped{"user", "wants", "travel"};
  std::map<std::string, std::string> aliases{{"destination.place", "destination"},
                                             {"origin.place", "origin"}};
  std::string joiner = "_";
  std::string empty_slot = "root";

  std::string slot_name(const std::vector<std::string>& path) const {
    std::size_t b = 0;
    while (b < path.size() && dropped.count(path[b])) ++b;
    if (b == path.size()) return empty_slot;
    std::string name;
    std::size_t used = b;
    std::string dotted;
    for (std::size_t i = b; i < path.size(); ++i) {
      dotted += (i > b ? "." : "") + path[i];
      if (auto it = aliases.find(dotted); it != aliases.end()) {
        name = it->second;
        used = i + 1;
      }
    }
    for (std::size_t i = used; i < path.size(); ++i) name += (name.empty() ? "" : joiner) + path[i];
    return name;
  }
};

namespace detail {

inline void flatten(const UpdateExpr& e, std::vector<std::string>& path, const std::string& function,
                    const SlotAliases& aliases, std::set<SemanticUnit>& out);

inline bool has_focus(const Term& t) {
  for (const auto& s : t.segments)
    if (s.kind == Segment::Kind::Focus) return true;
  return false;
}

inline void flatten_term(const Term& t, std::vector<std::string>& path, const std::string& function,
                         bool denial_context, const SlotAliases& aliases,
                         std::set<SemanticUnit>& out) {
  std::size_t depth = path.size();
  for (std::size_t i = 0; i < t.segments.size(); ++i) {
    const Segment& s = t.segments[i];
    bool last = i + 1 == t.segments.size();
    if (s.kind == Segment::Kind::Atom) {
      if (last)
        out.insert(SemanticUnit{function, aliases.slot_name(path), s.atom});
      else
        path.push_back(s.atom);
      continue;
    }
    std::string fn = function;
    if (s.kind == Segment::Kind::Focus) fn = "correction";
    if (s.kind == Segment::Kind::Ground && denial_context) fn = "denial";
    flatten(s.inner.front(), path, fn, aliases, out);
  }
  path.resize(depth);
}

inline void flatten(const UpdateExpr& e, std::vector<std::string>& path, const std::string& function,
                    const SlotAliases& aliases, std::set<SemanticUnit>& out) {
  // ground material conjoined with a focus is what the focus replaces
  bool denial_context = false;
  for (const auto& t : e.terms) denial_context = denial_context || has_focus(t);
  for (const auto& t : e.terms) flatten_term(t, path, function, denial_context, aliases, out);
}

}  // namespace detail

/// One unit per leaf value: the function comes from the innermost marker
/// (`correction` for focus, `denial` for ground conjoined with a focus,
/// `assertion` otherwise), the slot from the path leading to the value.
inline std::set<SemanticUnit> to_semantic_units(const UpdateExpr& u,
                                                const SlotAliases& aliases = SlotAliases{}) {
  std::set<SemanticUnit> out;
  std::vector<std::string> path;
  detail::flatten(u, path, "assertion", aliases, out);
  return out;
}

}  // namespace wgp
