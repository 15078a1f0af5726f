#pragma once

// Parse trees, the bracketed treebank format and subtree (fragment)
// extraction.
//
// A Tree node is one of
//   internal: label + children
//   word:     a terminal leaf (word set, no children)
//   site:     label only, no children and no word; only legal inside
//             fragments, where it marks a substitution site.
//
// Node syntax: (<cat>[:<meet>,<join>[:<rule-id>]] <children-or-word>...)

#include <algorithm>
#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wgp/error.hpp"
#include "wgp/lattice.hpp"

namespace wgp {

struct SemType {
  int meet = 0;
  int join = 0;
  auto operator<=>(const SemType&) const = default;
};

/// Meet value reserved for exception types; the join then indexes the rule.
inline constexpr int kExceptionMeet = -1;

struct Tree {
  std::string label;                // category; empty on word leaves
  std::optional<SemType> semtype;   // nonterminals only
  std::string semrule;              // internal nodes only; empty = none
  std::vector<Tree> children;
  std::optional<std::string> word;  // word leaves only

  bool is_word() const { return word.has_value(); }
  bool is_site() const { return !word && children.empty(); }
  bool is_internal() const { return !children.empty(); }

  static Tree leaf(std::string w) {
    Tree t;
    t.word = std::move(w);
    return t;
  }
  static Tree site(std::string cat, std::optional<SemType> type = std::nullopt) {
    Tree t;
    t.label = std::move(cat);
    t.semtype = type;
    return t;
  }
  static Tree node(std::string cat, std::vector<Tree> kids) {
    Tree t;
    t.label = std::move(cat);
    t.children = std::move(kids);
    return t;
  }

  friend bool operator==(const Tree&, const Tree&) = default;
};

// ---------------------------------------------------------------------------
// serialization

inline std::string node_head(const Tree& t, bool with_rule = true) {
  std::string h = t.label;
  if (t.semtype) {
    h += ':' + std::to_string(t.semtype->meet) + ',' + std::to_string(t.semtype->join);
    if (with_rule && !t.semrule.empty()) h += ':' + t.semrule;
  }
  return h;
}

inline void write_tree(const Tree& t, std::string& out) {
  if (t.is_word()) {
    out += *t.word;
    return;
  }
  out += '(';
  out += node_head(t, t.is_internal());
  for (const auto& c : t.children) {
    out += ' ';
    write_tree(c, out);
  }
  out += ')';
}

/// Canonical serialization; also the multiset key of a fragment.
inline std::string to_string(const Tree& t) {
  std::string out;
  write_tree(t, out);
  return out;
}

/// Equal to to_string(t).size(), without building the string.
inline std::size_t serialized_length(const Tree& t) {
  if (t.is_word()) return t.word->size();
  std::size_t n = 2 + node_head(t, t.is_internal()).size();
  for (const auto& c : t.children) n += 1 + serialized_length(c);
  return n;
}

inline Words yield(const Tree& t) {
  Words out;
  auto walk = [&](const auto& self, const Tree& n) -> void {
    if (n.is_word()) out.push_back(*n.word);
    for (const auto& c : n.children) self(self, c);
  };
  walk(walk, t);
  return out;
}

inline std::size_t count_nodes(const Tree& t) {
  std::size_t n = 1;
  for (const auto& c : t.children) n += count_nodes(c);
  return n;
}

/// Depth in edges; words and sites count as depth 0.
inline int tree_depth(const Tree& t) {
  int d = 0;
  for (const auto& c : t.children) d = std::max(d, 1 + tree_depth(c));
  return d;
}

// ---------------------------------------------------------------------------
// reading

namespace detail {

struct TreeLexer {
  std::string_view text;
  std::size_t line;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' || text[pos] == '\r')) ++pos;
  }
  bool at_end() {
    skip_ws();
    return pos >= text.size();
  }
  char peek() {
    skip_ws();
    return pos < text.size() ? text[pos] : '\0';
  }
  std::string_view atom() {
    skip_ws();
    std::size_t b = pos;
    while (pos < text.size() && text[pos] != ' ' && text[pos] != '\t' && text[pos] != '\r' &&
           text[pos] != '(' && text[pos] != ')')
      ++pos;
    return text.substr(b, pos - b);
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(what + " at column " + std::to_string(pos + 1), line);
  }
};

inline int parse_sem_int(std::string_view s, TreeLexer& lx) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    lx.fail("bad semantic type component '" + std::string(s) + "'");
  return v;
}

inline void parse_head(std::string_view head, Tree& t, TreeLexer& lx) {
  auto c1 = head.find(':');
  t.label = std::string(head.substr(0, c1));
  if (t.label.empty()) lx.fail("empty category");
  if (c1 == std::string_view::npos) return;
  auto rest = head.substr(c1 + 1);
  auto c2 = rest.find(':');
  auto type = rest.substr(0, c2);
  auto comma = type.find(',');
  if (comma == std::string_view::npos) lx.fail("semantic type must read '<meet>,<join>'");
  t.semtype = SemType{parse_sem_int(type.substr(0, comma), lx),
                      parse_sem_int(type.substr(comma + 1), lx)};
  if (c2 != std::string_view::npos) {
    t.semrule = std::string(rest.substr(c2 + 1));
    if (t.semrule.empty() || t.semrule.find(':') != std::string::npos)
      lx.fail("bad semantic rule id");
  }
}

inline Tree parse_node(TreeLexer& lx, bool allow_sites) {
  if (lx.peek() != '(') lx.fail("expected '('");
  ++lx.pos;
  auto head = lx.atom();
  if (head.empty()) lx.fail("missing category after '('");
  Tree t;
  parse_head(head, t, lx);
  while (true) {
    char c = lx.peek();
    if (c == '\0') lx.fail("unbalanced brackets: missing ')'");
    if (c == ')') {
      ++lx.pos;
      break;
    }
    if (c == '(') {
      t.children.push_back(parse_node(lx, allow_sites));
    } else {
      t.children.push_back(Tree::leaf(std::string(lx.atom())));
    }
  }
  if (t.children.empty()) {
    if (!allow_sites) lx.fail("node '" + t.label + "' has neither children nor a word");
    if (!t.semrule.empty()) lx.fail("substitution site '" + t.label + "' carries a rule");
  }
  return t;
}

inline void collect_annotation(const Tree& t, std::size_t& with, std::size_t& without) {
  if (t.is_word()) return;
  (t.semtype ? with : without)++;
  for (const auto& c : t.children) collect_annotation(c, with, without);
}

}  // namespace detail

/// Parses one bracketed tree. With `allow_sites`, childless nodes are
/// substitution sites (fragment syntax); otherwise they are an error.
inline Tree read_tree(std::string_view text, std::size_t line = 0, bool allow_sites = false) {
  detail::TreeLexer lx{text, line};
  Tree t = detail::parse_node(lx, allow_sites);
  if (!lx.at_end()) lx.fail("trailing text after tree (unbalanced brackets)");
  return t;
}

/// One tree per line; blank lines and '#' lines are skipped. Semantic
/// annotation is all-or-nothing across the treebank.
inline std::vector<Tree> read_treebank(std::string_view text) {
  std::vector<Tree> trees;
  std::size_t with = 0, without = 0, first_with = 0, first_without = 0;
  for (auto [lineno, raw] : detail::numbered_lines(text)) {
    auto toks = detail::split_ws(raw);
    if (toks.empty() || toks[0].front() == '#') continue;
    trees.push_back(read_tree(raw, lineno));
    std::size_t w = 0, wo = 0;
    detail::collect_annotation(trees.back(), w, wo);
    if (w && !first_with) first_with = lineno;
    if (wo && !first_without) first_without = lineno;
    with += w;
    without += wo;
  }
  if (with && without)
    throw ParseError("mixed semantic annotation: typed nodes at line " + std::to_string(first_with) +
                         ", untyped nodes at line " + std::to_string(first_without),
                     std::max(first_with, first_without));
  return trees;
}

inline std::string write_treebank(const std::vector<Tree>& trees) {
  std::string out;
  for (const auto& t : trees) out += to_string(t) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// subtree extraction

struct SubtreeConstraints {
  int d = 4;                         // max depth
  int l = 9;                         // max lexical items
  int L = 3;                         // max consecutive lexical items
  int n = 2;                         // max substitution sites
  std::size_t large_graph_threshold = 350;
  int large_graph_d = 2;

  void validate() const {
    if (d < 1 || l < 1 || L < 1 || n < 1 || large_graph_d < 1)
      throw ConfigError("subtree constraints must all be >= 1");
    if (large_graph_d > d) throw ConfigError("large_graph_d must not exceed d");
  }

  friend bool operator==(const SubtreeConstraints&, const SubtreeConstraints&) = default;
};

struct SubtreeEntry {
  Tree fragment;
  std::size_t count = 0;
  int depth = 0;
};

struct SubtreeMultiset {
  std::map<std::string, SubtreeEntry> entries;  // canonical form -> entry
  std::map<std::string, std::size_t> roots;     // root category -> total count
  SubtreeConstraints constraints;

  void add(const Tree& fragment, std::size_t count = 1) {
    auto key = to_string(fragment);
    auto it = entries.find(key);
    if (it == entries.end())
      entries.emplace(key, SubtreeEntry{fragment, count, tree_depth(fragment)});
    else
      it->second.count += count;
    roots[fragment.label] += count;
  }

  void merge(const SubtreeMultiset& other) {
    for (const auto& [key, e] : other.entries) add(e.fragment, e.count);
  }

  std::size_t total() const {
    std::size_t s = 0;
    for (const auto& [r, c] : roots) s += c;
    return s;
  }
  bool empty() const { return entries.empty(); }
};

namespace detail {

/// Word-run summary of a fragment frontier, composable by concatenation.
struct Run {
  int lead = 0;   // words before the first site
  int trail = 0;  // words after the last site
  int max = 0;    // longest run of adjacent words
  bool all_words = true;

  static Run word() { return {1, 1, 1, true}; }
  static Run site() { return {0, 0, 0, false}; }

  friend Run operator+(const Run& a, const Run& b) {
    Run r;
    r.all_words = a.all_words && b.all_words;
    r.lead = a.all_words ? a.lead + b.lead : a.lead;
    r.trail = b.all_words ? a.trail + b.trail : b.trail;
    r.max = std::max({a.max, b.max, a.trail + b.lead});
    return r;
  }
};

struct Part {
  Tree tree;
  int depth = 0;
  int lex = 0;
  int sites = 0;
  Run run;
};

inline Tree site_of(const Tree& node) { return Tree::site(node.label, node.semtype); }

class FragmentEnumerator {
 public:
  explicit FragmentEnumerator(const SubtreeConstraints& c) : c_(c) {}

  /// Fragments rooted at `node` (expanded at the root) of depth <= budget
  /// that satisfy l, L and n.
  const std::vector<Part>& expanded(const Tree& node, int budget) {
    auto key = std::make_pair(&node, budget);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;

    std::vector<Part> acc{Part{Tree::node(node.label, {}), 0, 0, 0, Run{}}};
    acc.front().tree.semtype = node.semtype;
    acc.front().tree.semrule = node.semrule;
    for (const auto& child : node.children) {
      std::vector<Part> options;
      if (child.is_word()) {
        options.push_back(Part{child, 0, 1, 0, Run::word()});
      } else {
        options.push_back(Part{site_of(child), 0, 0, 1, Run::site()});
        if (budget >= 2)
          for (const auto& p : expanded(child, budget - 1)) options.push_back(p);
      }
      std::vector<Part> next;
      for (const auto& a : acc) {
        for (const auto& o : options) {
          Part p{a.tree, std::max(a.depth, 1 + o.depth), a.lex + o.lex, a.sites + o.sites,
                 a.run + o.run};
          if (p.lex > c_.l || p.sites > c_.n || p.run.max > c_.L) continue;
          p.tree.children.push_back(o.tree);
          next.push_back(std::move(p));
        }
      }
      acc = std::move(next);
      if (acc.empty()) break;
    }
    return memo_.emplace(key, std::move(acc)).first->second;
  }

  static Tree depth_one(const Tree& node) {
    Tree t = Tree::node(node.label, {});
    t.semtype = node.semtype;
    t.semrule = node.semrule;
    for (const auto& c : node.children) t.children.push_back(c.is_word() ? c : site_of(c));
    return t;
  }

 private:
  SubtreeConstraints c_;
  std::map<std::pair<const Tree*, int>, std::vector<Part>> memo_;
};

inline void extract_from(const Tree& node, FragmentEnumerator& en, int d, SubtreeMultiset& ms) {
  if (!node.is_internal()) return;
  Tree d1 = FragmentEnumerator::depth_one(node);
  ms.add(d1);
  for (const auto& p : en.expanded(node, d))
    if (p.depth > 1) ms.add(p.tree);
  for (const auto& c : node.children) extract_from(c, en, d, ms);
}

}  // namespace detail

/// Counts every fragment occurrence rooted at a corpus node that satisfies
/// the constraints. Depth-1 fragments are always counted.
inline SubtreeMultiset extract_subtrees(const std::vector<Tree>& trees,
                                        const SubtreeConstraints& c) {
  c.validate();
  SubtreeMultiset ms;
  ms.constraints = c;
  for (const auto& t : trees) {
    detail::FragmentEnumerator en(c);
    detail::extract_from(t, en, c.d, ms);
  }
  return ms;
}

/// Grammar file: one "<count>\t<fragment>" per line.
inline std::string write_multiset(const SubtreeMultiset& ms) {
  std::string out;
  for (const auto& [key, e] : ms.entries) out += std::to_string(e.count) + '\t' + key + '\n';
  return out;
}

inline SubtreeMultiset read_multiset(std::string_view text) {
  SubtreeMultiset ms;
  for (auto [lineno, raw] : detail::numbered_lines(text)) {
    auto toks = detail::split_ws(raw);
    if (toks.empty() || toks[0].front() == '#') continue;
    auto tab = raw.find('\t');
    if (tab == std::string_view::npos) throw ParseError("expected '<count>\\t<fragment>'", lineno);
    auto count = detail::parse_int<std::size_t>(detail::split_ws(raw.substr(0, tab)).at(0), lineno,
                                                "count");
    ms.add(read_tree(raw.substr(tab + 1), lineno, true), count);
  }
  return ms;
}

// ---------------------------------------------------------------------------
// semantic decidability

/// Depth-1 signature: root category and type plus each child's category
/// and type (or the word itself). The rule is not part of it.
inline std::string depth_one_signature(const Tree& node) {
  std::string s = node_head(node, false) + " ->";
  for (const auto& c : node.children) s += ' ' + (c.is_word() ? '"' + *c.word + '"' : node_head(c, false));
  return s;
}

struct DecidabilityReport {
  double decidable_fraction = 1.0;
  std::map<std::string, std::set<std::string>> exceptions;  // signature -> rules seen
};

/// A depth-1 signature is decidable iff exactly one semantic rule occurs
/// with it.
inline DecidabilityReport check_semantic_decidability(const SubtreeMultiset& ms) {
  std::map<std::string, std::set<std::string>> rules;
  for (const auto& [key, e] : ms.entries)
    if (e.depth == 1) rules[depth_one_signature(e.fragment)].insert(e.fragment.semrule);
  DecidabilityReport r;
  if (rules.empty()) return r;
  std::size_t unique = 0;
  for (const auto& [sig, rs] : rules) {
    if (rs.size() == 1)
      ++unique;
    else
      r.exceptions.emplace(sig, rs);
  }
  r.decidable_fraction = static_cast<double>(unique) / static_cast<double>(rules.size());
  return r;
}

/// Rewrites the types of corpus nodes with an ambiguous signature to an
/// exception type (kExceptionMeet, index of the node's rule among the
/// signature's rules), which makes the signature unique again.
inline std::vector<Tree> assign_exception_types(std::vector<Tree> trees,
                                                const DecidabilityReport& report) {
  // signatures are taken from the original types, not rewritten children
  std::vector<Tree> original = trees;
  auto rewrite = [&](const auto& self, Tree& n, const Tree& orig) -> void {
    if (!n.is_internal()) return;
    for (std::size_t i = 0; i < n.children.size(); ++i) self(self, n.children[i], orig.children[i]);
    auto it = report.exceptions.find(depth_one_signature(orig));
    if (it == report.exceptions.end()) return;
    int index = static_cast<int>(std::distance(it->second.begin(), it->second.find(orig.semrule)));
    n.semtype = SemType{kExceptionMeet, index};
  };
  for (std::size_t i = 0; i < trees.size(); ++i) rewrite(rewrite, trees[i], original[i]);
  return trees;
}

}  // namespace wgp
