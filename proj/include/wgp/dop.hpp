#pragma once

// Stochastic tree-substitution grammars built from subtree multisets, and
// most-probable-derivation parsing of sentences and word graphs.
//
// P(t) = count(t) / sum of counts of subtrees with the same root
// nonterminal. In semantic mode a nonterminal is a category together with
// its semantic type, so substitution also requires equal types.
//
// The chart parser compiles every fragment into one rule per internal
// fragment node. Non-root fragment nodes get private symbols, so a chart
// derivation corresponds to exactly one STSG derivation and Viterbi search
// over the compiled rules gives the most probable derivation. Spans are
// (state, state) pairs of an epsilon-free word graph; sentences are chains.
//
// Ties are broken by the shortlex order of the derived tree's canonical
// serialization, then of the derivation (fragment keys joined by ' ' in
// leftmost order). Both components compose over sub-spans, which keeps the
// dynamic program exact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wgp/error.hpp"
#include "wgp/lattice.hpp"
#include "wgp/treebank.hpp"
#include "wgp/update.hpp"

namespace wgp {

/// Symbol under which a node is substituted and normalized.
inline std::string nonterminal_key(const Tree& node, bool semantic) {
  return semantic ? node_head(node, false) : node.label;
}

/// True iff `sub` may be substituted at `site`.
inline bool check_substitution(const Tree& site, const Tree& sub, bool semantic) {
  if (site.label != sub.label) return false;
  return !semantic || site.semtype == sub.semtype;
}

struct GrammarRule {
  Tree fragment;
  std::string key;  // canonical serialization
  std::size_t count = 0;
  std::size_t root_total = 0;
  double prob = 0.0;
  double logprob = 0.0;
  int depth = 0;
  std::string root_symbol;
};

namespace detail {

struct Child {
  enum class Kind : std::uint8_t { Word, Symbol, Node };
  Kind kind = Kind::Word;
  int id = 0;  // word id, symbol id or node id; transition index in chart backpointers
};

struct NodeRule {
  std::vector<Child> children;
  std::string head;
  int rule = -1;      // fragment index when this node is a fragment root
  int parent = -1;    // enclosing fragment node
  int position = 0;   // index among the parent's children
};

struct CompiledGrammar {
  std::vector<std::string> symbols;
  std::unordered_map<std::string, int> symbol_ids;
  std::vector<std::string> symbol_category;
  std::unordered_map<std::string, int> word_ids;
  std::vector<std::string> words;
  std::vector<NodeRule> nodes;
  std::vector<int> rule_root;
  std::vector<int> rule_symbol;
  std::vector<std::vector<int>> first_word;    // word id -> nodes starting with it
  std::vector<std::vector<int>> first_symbol;  // symbol id -> nodes starting with it

  int symbol(const std::string& key, const std::string& category) {
    auto [it, inserted] = symbol_ids.emplace(key, static_cast<int>(symbols.size()));
    if (inserted) {
      symbols.push_back(key);
      symbol_category.push_back(category);
      first_symbol.emplace_back();
    }
    return it->second;
  }
  int word(const std::string& w) {
    auto [it, inserted] = word_ids.emplace(w, static_cast<int>(words.size()));
    if (inserted) {
      words.push_back(w);
      first_word.emplace_back();
    }
    return it->second;
  }

  int compile_node(const Tree& t, int rule, int parent, int position, bool semantic) {
    int id = static_cast<int>(nodes.size());
    nodes.push_back(NodeRule{{}, node_head(t, true), rule, parent, position});
    std::vector<Child> kids;
    for (std::size_t i = 0; i < t.children.size(); ++i) {
      const Tree& c = t.children[i];
      if (c.is_word())
        kids.push_back({Child::Kind::Word, word(*c.word)});
      else if (c.is_site())
        kids.push_back({Child::Kind::Symbol, symbol(nonterminal_key(c, semantic), c.label)});
      else
        kids.push_back({Child::Kind::Node, compile_node(c, -1, id, static_cast<int>(i), semantic)});
    }
    nodes[id].children = std::move(kids);
    const Child& first = nodes[id].children.front();
    if (first.kind == Child::Kind::Word) first_word[first.id].push_back(id);
    if (first.kind == Child::Kind::Symbol) first_symbol[first.id].push_back(id);
    return id;
  }

  void compile(const std::vector<GrammarRule>& rules, bool semantic) {
    for (std::size_t r = 0; r < rules.size(); ++r) {
      int sym = symbol(rules[r].root_symbol, rules[r].fragment.label);
      rule_symbol.push_back(sym);
      rule_root.push_back(compile_node(rules[r].fragment, static_cast<int>(r), -1, 0, semantic));
    }
  }
};

}  // namespace detail

class SubtreeGrammar {
 public:
  SubtreeGrammar() = default;

  SubtreeGrammar(const SubtreeMultiset& ms, std::string start, bool semantic)
      : start_(std::move(start)), semantic_(semantic), constraints_(ms.constraints) {
    if (ms.empty()) throw ConfigError("cannot build a grammar from an empty subtree multiset");
    std::map<std::string, std::size_t> totals;
    for (const auto& [key, e] : ms.entries) totals[nonterminal_key(e.fragment, semantic)] += e.count;
    std::set<std::string> start_symbols;
    for (const auto& [sym, total] : totals) {
      std::string cat = sym.substr(0, sym.find(':'));
      if (sym == start_ || cat == start_) start_symbols.insert(sym);
    }
    if (start_symbols.empty()) throw ConfigError("start label '" + start_ + "' roots no subtree");
    for (const auto& [key, e] : ms.entries) {
      GrammarRule r;
      r.fragment = e.fragment;
      r.key = key;
      r.count = e.count;
      r.root_symbol = nonterminal_key(e.fragment, semantic);
      r.root_total = totals.at(r.root_symbol);
      r.prob = static_cast<double>(r.count) / static_cast<double>(r.root_total);
      r.logprob = std::log(r.prob);
      r.depth = e.depth;
      index_.emplace(key, rules_.size());
      rules_.push_back(std::move(r));
    }
    compiled_.compile(rules_, semantic_);
    for (const auto& s : start_symbols) start_symbol_ids_.insert(compiled_.symbol_ids.at(s));
  }

  const std::vector<GrammarRule>& rules() const { return rules_; }
  const std::string& start() const { return start_; }
  bool semantic() const { return semantic_; }
  const SubtreeConstraints& constraints() const { return constraints_; }
  std::size_t size() const { return rules_.size(); }

  std::optional<std::size_t> find(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// The grammar extraction at depth `d` would have produced: fragments
  /// deeper than `d` removed and the rest renormalized.
  SubtreeGrammar restricted_to_depth(int d) const {
    SubtreeMultiset ms;
    ms.constraints = constraints_;
    ms.constraints.d = d;
    ms.constraints.large_graph_d = std::min(ms.constraints.large_graph_d, d);
    for (const auto& r : rules_)
      if (r.depth <= d) ms.add(r.fragment, r.count);
    return SubtreeGrammar(ms, start_, semantic_);
  }

  int max_depth() const {
    int d = 0;
    for (const auto& r : rules_) d = std::max(d, r.depth);
    return d;
  }

  const detail::CompiledGrammar& compiled() const { return compiled_; }
  const std::set<int>& start_symbols() const { return start_symbol_ids_; }

 private:
  std::string start_;
  bool semantic_ = false;
  SubtreeConstraints constraints_;
  std::vector<GrammarRule> rules_;
  std::unordered_map<std::string, std::size_t> index_;
  detail::CompiledGrammar compiled_;
  std::set<int> start_symbol_ids_;
};

inline SubtreeGrammar build_grammar(const SubtreeMultiset& ms, const std::string& start, bool semantic) {
  return SubtreeGrammar(ms, start, semantic);
}

// ---------------------------------------------------------------------------
// derivations

struct Derivation {
  std::vector<std::size_t> subtrees;  // rule indices in leftmost substitution order
  Tree tree;
  double probability = 1.0;
  double log_probability = 0.0;
};

struct IDerivation {
  LatticePath path;
  Derivation derivation;
  double combined = 0.0;
};

/// Serialization used as the secondary tie-break: fragment keys in order.
inline std::string derivation_key(const SubtreeGrammar& g, const Derivation& d) {
  std::string out;
  for (std::size_t i = 0; i < d.subtrees.size(); ++i) {
    if (i) out += ' ';
    out += g.rules()[d.subtrees[i]].key;
  }
  return out;
}

/// Substitutes the rules in order, each at the leftmost open site.
inline Tree compose(const SubtreeGrammar& g, const std::vector<std::size_t>& subtrees) {
  if (subtrees.empty()) throw SemanticError("empty derivation");
  Tree tree = g.rules().at(subtrees.front()).fragment;
  for (std::size_t i = 1; i < subtrees.size(); ++i) {
    const Tree& sub = g.rules().at(subtrees[i]).fragment;
    auto fill = [&](const auto& self, Tree& n) -> bool {
      if (n.is_site()) {
        if (!check_substitution(n, sub, g.semantic()))
          throw SemanticError("subtree " + g.rules()[subtrees[i]].key + " does not fit site " +
                              node_head(n, false));
        n = sub;
        return true;
      }
      for (auto& c : n.children)
        if (self(self, c)) return true;
      return false;
    };
    if (!fill(fill, tree)) throw SemanticError("derivation has more subtrees than sites");
  }
  return tree;
}

/// Sum over all derivations of `t`. Small instances only; the recursion
/// visits every derivation through the choice of a fragment at each node.
inline double parse_probability(const SubtreeGrammar& g, const Tree& t) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_category;
  for (std::size_t r = 0; r < g.rules().size(); ++r) by_category[g.rules()[r].fragment.label].push_back(r);
  std::map<const Tree*, double> memo;

  auto inside = [&](const auto& self, const Tree& node) -> double {
    if (!node.is_internal()) return 0.0;
    if (auto it = memo.find(&node); it != memo.end()) return it->second;
    double total = 0.0;
    auto it = by_category.find(node.label);
    if (it != by_category.end()) {
      for (std::size_t r : it->second) {
        const Tree& frag = g.rules()[r].fragment;
        if (g.semantic() && frag.semtype != node.semtype) continue;
        std::vector<const Tree*> sites;
        auto match = [&](const auto& m, const Tree& f, const Tree& n) -> bool {
          if (f.is_word()) return n.is_word() && *f.word == *n.word;
          if (f.is_site()) {
            if (!n.is_internal() || !check_substitution(f, n, g.semantic())) return false;
            sites.push_back(&n);
            return true;
          }
          if (!n.is_internal() || f.label != n.label || f.semtype != n.semtype ||
              f.semrule != n.semrule || f.children.size() != n.children.size())
            return false;
          for (std::size_t i = 0; i < f.children.size(); ++i)
            if (!m(m, f.children[i], n.children[i])) return false;
          return true;
        };
        if (!match(match, frag, node)) continue;
        double p = g.rules()[r].prob;
        for (const Tree* s : sites) {
          p *= self(self, *s);
          if (p == 0.0) break;
        }
        total += p;
      }
    }
    memo[&node] = total;
    return total;
  };
  return inside(inside, t);
}

// ---------------------------------------------------------------------------
// chart parsing

inline constexpr double kScoreTolerance = 1e-12;

inline bool scores_tie(double a, double b) {
  return std::abs(a - b) <= kScoreTolerance * std::max({1.0, std::abs(a), std::abs(b)});
}

namespace detail {

struct ItemKey {
  int node = 0;
  int dot = 0;  // children completed
  friend bool operator==(const ItemKey&, const ItemKey&) = default;
};

struct ItemKeyHash {
  std::size_t operator()(const ItemKey& k) const {
    return std::hash<std::uint64_t>()((static_cast<std::uint64_t>(k.node) << 20) ^
                                      static_cast<std::uint64_t>(k.dot));
  }
};

struct Entry {
  enum class Op : std::uint8_t { Start, Extend, Rule };
  double score = 0.0;
  double logprob = 0.0;
  double acoustic = 0.0;
  std::size_t tree_len = 0;
  std::size_t deriv_len = 0;
  Op op = Op::Start;
  std::size_t split = 0;  // Extend: left item spans (i, split), child (split, j)
  Child child;            // Start/Extend
  int rule = -1;          // Rule
};

struct WordArc {
  std::size_t transition = 0;
  double cost = 0.0;
};

struct Cell {
  std::unordered_map<ItemKey, Entry, ItemKeyHash> items;
  std::unordered_map<int, Entry> symbols;
  std::unordered_map<int, WordArc> arcs;  // word id -> cheapest transition
  bool empty() const { return items.empty() && symbols.empty() && arcs.empty(); }
};

struct ChartRef {
  bool symbol = false;
  std::size_t i = 0, j = 0;
  int id = 0;  // symbol id
  ItemKey item;
};

class Chart {
 public:
  Chart(const SubtreeGrammar& g, const WordGraph& wg, double lambda)
      : g_(g), cg_(g.compiled()), wg_(wg), n_(wg.num_states()), lambda_(lambda),
        cells_(n_ * n_) {
    if (wg.has_epsilons()) throw GraphError("chart parsing requires an epsilon-free word graph");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    key_len_.reserve(g.rules().size());
    for (const auto& r : g.rules()) key_len_.push_back(r.key.size());
    fill();
  }

  std::size_t num_states() const { return n_; }
  const WordGraph& graph() const { return wg_; }

  /// Best symbol entry over the span among symbols accepted by `pred`.
  template <typename Pred>
  std::optional<ChartRef> best_symbol(std::size_t i, std::size_t j, Pred pred) const {
    std::optional<ChartRef> best;
    for (const auto& [sym, e] : cell(i, j).symbols) {
      if (!pred(sym)) continue;
      ChartRef ref{true, i, j, sym, {}};
      if (!best || better(ref, e, *best, entry(*best))) best = ref;
    }
    return best;
  }

  bool better_ref(const ChartRef& a, const ChartRef& b) const { return better(a, entry(a), b, entry(b)); }

  const Entry& entry(const ChartRef& r) const {
    const Cell& c = cell(r.i, r.j);
    return r.symbol ? c.symbols.at(r.id) : c.items.at(r.item);
  }

  IDerivation extract(const ChartRef& top) const {
    IDerivation out;
    std::vector<std::size_t> transitions;
    out.derivation.tree = build(top, transitions, out.derivation.subtrees);
    const Entry& e = entry(top);
    out.derivation.log_probability = e.logprob;
    double p = 1.0;
    for (std::size_t r : out.derivation.subtrees) p *= g_.rules()[r].prob;
    out.derivation.probability = p;
    out.path.transitions = transitions;
    for (std::size_t t : transitions) {
      out.path.words.push_back(wg_.transitions()[t].label);
      out.path.acoustic_total += wg_.transitions()[t].cost;
    }
    out.combined = e.score;
    return out;
  }

  std::string tree_string(const ChartRef& r) const { return tree_str(r, entry(r)); }

  /// Working-set estimate of the chart in bytes.
  std::size_t work_bytes() const {
    std::size_t entries = 0;
    for (const auto& c : cells_) entries += c.items.size() + c.symbols.size() + c.arcs.size();
    return cells_.size() * sizeof(Cell) + entries * (sizeof(Entry) + 3 * sizeof(void*));
  }

 private:
  Cell& cell(std::size_t i, std::size_t j) { return cells_[i * n_ + j]; }
  const Cell& cell(std::size_t i, std::size_t j) const { return cells_[i * n_ + j]; }
  int arity(int node) const { return static_cast<int>(cg_.nodes[node].children.size()); }

  // -- string reconstruction (tie-breaks only) ------------------------------

  std::string child_tree_str(const Child& c, std::size_t a, std::size_t b) const {
    switch (c.kind) {
      case Child::Kind::Word:
        return wg_.transitions()[c.id].label;
      case Child::Kind::Symbol: {
        ChartRef r{true, a, b, c.id, {}};
        return tree_str(r, entry(r));
      }
      case Child::Kind::Node: {
        ChartRef r{false, a, b, 0, {c.id, arity(c.id)}};
        return tree_str(r, entry(r));
      }
    }
    return {};
  }

  std::string tree_str(const ChartRef& r, const Entry& e) const {
    if (r.symbol) {
      int root = cg_.rule_root[e.rule];
      ChartRef node{false, r.i, r.j, 0, {root, arity(root)}};
      return tree_str(node, entry(node));
    }
    std::string s;
    std::size_t child_from = r.i;
    if (e.op == Entry::Op::Start) {
      s = "(" + cg_.nodes[r.item.node].head;
    } else {
      ChartRef left{false, r.i, e.split, 0, {r.item.node, r.item.dot - 1}};
      s = tree_str(left, entry(left));
      child_from = e.split;
    }
    s += ' ';
    s += child_tree_str(e.child, child_from, r.j);
    if (r.item.dot == arity(r.item.node)) s += ')';
    return s;
  }

  static void join(std::string& a, const std::string& b) {
    if (b.empty()) return;
    if (!a.empty()) a += ' ';
    a += b;
  }

  std::string deriv_str(const ChartRef& r, const Entry& e) const {
    if (r.symbol) {
      int root = cg_.rule_root[e.rule];
      ChartRef node{false, r.i, r.j, 0, {root, arity(root)}};
      std::string s = g_.rules()[e.rule].key;
      join(s, deriv_str(node, entry(node)));
      return s;
    }
    std::string s;
    std::size_t child_from = r.i;
    if (e.op == Entry::Op::Extend) {
      ChartRef left{false, r.i, e.split, 0, {r.item.node, r.item.dot - 1}};
      s = deriv_str(left, entry(left));
      child_from = e.split;
    }
    if (e.child.kind == Child::Kind::Symbol) {
      ChartRef c{true, child_from, r.j, e.child.id, {}};
      join(s, deriv_str(c, entry(c)));
    } else if (e.child.kind == Child::Kind::Node) {
      ChartRef c{false, child_from, r.j, 0, {e.child.id, arity(e.child.id)}};
      join(s, deriv_str(c, entry(c)));
    }
    return s;
  }

  /// Higher score, then shortlex tree, then shortlex derivation. Scores
  /// within kScoreTolerance (relative) tie: equal products summed in a
  /// different order differ in the last bits.
  bool better(const ChartRef& ra, const Entry& a, const ChartRef& rb, const Entry& b) const {
    if (!scores_tie(a.score, b.score)) return a.score > b.score;
    if (a.tree_len != b.tree_len) return a.tree_len < b.tree_len;
    int c = tree_str(ra, a).compare(tree_str(rb, b));
    if (c != 0) return c < 0;
    if (a.deriv_len != b.deriv_len) return a.deriv_len < b.deriv_len;
    return deriv_str(ra, a) < deriv_str(rb, b);
  }

  // -- filling -------------------------------------------------------------

  struct Pending {
    bool symbol;
    int id;
    ItemKey item;
  };

  static std::size_t joined_len(std::size_t a, std::size_t b) { return a && b ? a + 1 + b : a + b; }

  /// Proposes `cand` for an item of cell (i, j); returns true if it was
  /// stored. A candidate from the same backpointer always replaces the
  /// stored entry, since it reflects an improved source.
  bool offer_item(std::size_t i, std::size_t j, ItemKey key, Entry cand, std::deque<Pending>& work) {
    Cell& c = cell(i, j);
    if (key.dot == arity(key.node)) cand.tree_len += 1;
    auto it = c.items.find(key);
    ChartRef ref{false, i, j, 0, key};
    if (it != c.items.end()) {
      const Entry& old = it->second;
      bool same_source = old.op == cand.op && old.split == cand.split &&
                         old.child.kind == cand.child.kind && old.child.id == cand.child.id;
      if (!same_source && !better(ref, cand, ref, old)) return false;
      it->second = cand;
    } else {
      c.items.emplace(key, cand);
    }
    if (key.dot == arity(key.node)) work.push_back({false, 0, key});
    return true;
  }

  void offer_symbol(std::size_t i, std::size_t j, int sym, const Entry& cand, std::deque<Pending>& work) {
    Cell& c = cell(i, j);
    auto it = c.symbols.find(sym);
    ChartRef ref{true, i, j, sym, {}};
    if (it != c.symbols.end()) {
      const Entry& old = it->second;
      bool same_source = old.rule == cand.rule;
      if (!same_source && !better(ref, cand, ref, old)) return;
      it->second = cand;
    } else {
      c.symbols.emplace(sym, cand);
    }
    work.push_back({true, sym, {}});
  }

  Entry start_entry(int node, const Child& child, const Entry& sub, std::size_t child_tree_len) const {
    Entry e = sub;
    e.op = Entry::Op::Start;
    e.child = child;
    e.rule = -1;
    e.split = 0;
    e.tree_len = 1 + cg_.nodes[node].head.size() + 1 + child_tree_len;
    return e;
  }

  void close_cell(std::size_t i, std::size_t j, std::deque<Pending>& work) {
    while (!work.empty()) {
      Pending p = work.front();
      work.pop_front();
      Cell& c = cell(i, j);
      if (p.symbol) {
        Entry sub = c.symbols.at(p.id);
        Child child{Child::Kind::Symbol, p.id};
        for (int x : cg_.first_symbol[p.id]) offer_item(i, j, {x, 1}, start_entry(x, child, sub, sub.tree_len), work);
        continue;
      }
      Entry done = c.items.at(p.item);
      const NodeRule& nr = cg_.nodes[p.item.node];
      if (nr.rule >= 0) {
        const GrammarRule& gr = g_.rules()[nr.rule];
        Entry e = done;
        e.op = Entry::Op::Rule;
        e.rule = nr.rule;
        e.logprob += gr.logprob;
        e.score += lambda_ * gr.logprob;
        e.deriv_len = joined_len(key_len_[nr.rule], done.deriv_len);
        offer_symbol(i, j, cg_.rule_symbol[nr.rule], e, work);
      } else if (nr.position == 0) {
        Child child{Child::Kind::Node, p.item.node};
        offer_item(i, j, {nr.parent, 1}, start_entry(nr.parent, child, done, done.tree_len), work);
      }
    }
  }

  void fill() {
    const auto& ts = wg_.transitions();
    for (std::size_t t = 0; t < ts.size(); ++t) {
      auto it = cg_.word_ids.find(ts[t].label);
      if (it == cg_.word_ids.end()) continue;
      std::size_t a = wg_.index_of(ts[t].from), b = wg_.index_of(ts[t].to);
      auto& arcs = cell(a, b).arcs;
      auto found = arcs.find(it->second);
      if (found == arcs.end() || ts[t].cost < found->second.cost) arcs[it->second] = WordArc{t, ts[t].cost};
    }

    std::deque<Pending> work;
    for (std::size_t j = 1; j < n_; ++j) {
      for (std::size_t i = j; i-- > 0;) {
        // words spanning (i, j)
        for (const auto& [w, arc] : cell(i, j).arcs) {
          Entry leaf;
          leaf.score = -(1.0 - lambda_) * arc.cost;
          leaf.acoustic = arc.cost;
          Child child{Child::Kind::Word, static_cast<int>(arc.transition)};
          for (int x : cg_.first_word[w])
            offer_item(i, j, {x, 1}, start_entry(x, child, leaf, cg_.words[w].size()), work);
        }
        // binary extension over every split
        for (std::size_t k = i + 1; k < j; ++k) {
          const Cell& left = cell(i, k);
          const Cell& right = cell(k, j);
          if (left.items.empty() || right.empty()) continue;
          for (const auto& [key, le] : left.items) {
            if (key.dot == arity(key.node)) continue;
            const Child& next = cg_.nodes[key.node].children[key.dot];
            const Entry* sub = nullptr;
            Child child = next;
            std::size_t sub_len = 0;
            Entry word_entry;
            if (next.kind == Child::Kind::Word) {
              auto it = right.arcs.find(next.id);
              if (it == right.arcs.end()) continue;
              word_entry.score = -(1.0 - lambda_) * it->second.cost;
              word_entry.acoustic = it->second.cost;
              sub = &word_entry;
              child.id = static_cast<int>(it->second.transition);
              sub_len = cg_.words[next.id].size();
            } else if (next.kind == Child::Kind::Symbol) {
              auto it = right.symbols.find(next.id);
              if (it == right.symbols.end()) continue;
              sub = &it->second;
              sub_len = sub->tree_len;
            } else {
              auto it = right.items.find({next.id, arity(next.id)});
              if (it == right.items.end()) continue;
              sub = &it->second;
              sub_len = sub->tree_len;
            }
            Entry e;
            e.op = Entry::Op::Extend;
            e.split = k;
            e.child = child;
            e.score = le.score + sub->score;
            e.logprob = le.logprob + sub->logprob;
            e.acoustic = le.acoustic + sub->acoustic;
            e.tree_len = le.tree_len + 1 + sub_len;
            e.deriv_len = joined_len(le.deriv_len, sub->deriv_len);
            offer_item(i, j, {key.node, key.dot + 1}, e, work);
          }
        }
        close_cell(i, j, work);
      }
    }
  }

  // -- reconstruction --------------------------------------------------------

  Tree build(const ChartRef& r, std::vector<std::size_t>& transitions,
             std::vector<std::size_t>& rules) const {
    const Entry& e = entry(r);
    if (r.symbol) {
      rules.push_back(static_cast<std::size_t>(e.rule));
      int root = cg_.rule_root[e.rule];
      return build({false, r.i, r.j, 0, {root, arity(root)}}, transitions, rules);
    }
    // collect the children of this fragment node from the Extend chain
    std::vector<std::pair<Child, std::pair<std::size_t, std::size_t>>> kids;
    ChartRef cur = r;
    while (true) {
      const Entry& ce = entry(cur);
      if (ce.op == Entry::Op::Start) {
        kids.push_back({ce.child, {cur.i, cur.j}});
        break;
      }
      kids.push_back({ce.child, {ce.split, cur.j}});
      cur = ChartRef{false, cur.i, ce.split, 0, {cur.item.node, cur.item.dot - 1}};
    }
    std::reverse(kids.begin(), kids.end());
    const Tree& proto = node_proto(r.item.node);
    Tree t = Tree::node(proto.label, {});
    t.semtype = proto.semtype;
    t.semrule = proto.semrule;
    for (const auto& [child, span] : kids) {
      switch (child.kind) {
        case Child::Kind::Word:
          transitions.push_back(static_cast<std::size_t>(child.id));
          t.children.push_back(Tree::leaf(wg_.transitions()[child.id].label));
          break;
        case Child::Kind::Symbol:
          t.children.push_back(build({true, span.first, span.second, child.id, {}}, transitions, rules));
          break;
        case Child::Kind::Node:
          t.children.push_back(
              build({false, span.first, span.second, 0, {child.id, arity(child.id)}}, transitions, rules));
          break;
      }
    }
    return t;
  }

  /// The fragment node a compiled node was made from.
  const Tree& node_proto(int node) const {
    std::vector<int> chain;
    int x = node;
    while (cg_.nodes[x].parent >= 0) {
      chain.push_back(cg_.nodes[x].position);
      x = cg_.nodes[x].parent;
    }
    const Tree* t = &g_.rules()[cg_.nodes[x].rule].fragment;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) t = &t->children[*it];
    return *t;
  }

  const SubtreeGrammar& g_;
  const CompiledGrammar& cg_;
  const WordGraph& wg_;
  std::size_t n_;
  double lambda_;
  std::vector<Cell> cells_;
  std::vector<std::size_t> key_len_;
};

}  // namespace detail

struct SentenceParse {
  std::optional<Derivation> derivation;  // nullopt: no parse
  std::size_t work_bytes = 0;
};

inline std::optional<detail::ChartRef> best_top(const SubtreeGrammar& g, const detail::Chart& chart) {
  const WordGraph& wg = chart.graph();
  std::size_t s = wg.index_of(wg.start());
  std::optional<detail::ChartRef> best;
  for (StateId f : wg.finals()) {
    std::size_t e = wg.index_of(f);
    if (e <= s) continue;
    auto ref = chart.best_symbol(s, e, [&](int sym) { return g.start_symbols().count(sym) != 0; });
    if (ref && (!best || chart.better_ref(*ref, *best))) best = ref;
  }
  return best;
}

/// Most probable derivation of `words` rooted at the start symbol.
inline SentenceParse mpd_sentence(const SubtreeGrammar& g, const Words& words) {
  if (words.empty()) throw ConfigError("cannot parse an empty sentence");
  WordGraph chain = make_chain(words);
  detail::Chart chart(g, chain, 1.0);
  SentenceParse out;
  out.work_bytes = chart.work_bytes();
  if (auto top = best_top(g, chart)) out.derivation = chart.extract(*top).derivation;
  return out;
}

struct WordgraphParse {
  std::optional<IDerivation> best;  // nullopt: no path is parseable
  LatticePath fallback;             // best path under acoustic cost alone
  bool reduced_depth = false;       // large-graph depth limit was applied
  std::size_t work_bytes = 0;
};

/// Most probable intersection derivation: maximizes
/// (1 - lambda) * -acoustic + lambda * log P(derivation) over all pairs of a
/// path and a derivation of its words.
inline WordgraphParse mpd_wordgraph(const SubtreeGrammar& g, const WordGraph& wg, double lambda = 0.5) {
  WordgraphParse out;
  out.fallback = best_path_acoustic(wg);
  const auto& c = g.constraints();
  std::optional<SubtreeGrammar> reduced;
  if (wg.num_transitions() > c.large_graph_threshold && g.max_depth() > c.large_graph_d) {
    reduced = g.restricted_to_depth(c.large_graph_d);
    out.reduced_depth = true;
  }
  const SubtreeGrammar& use = reduced ? *reduced : g;
  detail::Chart chart(use, wg, lambda);
  out.work_bytes = chart.work_bytes();
  if (auto top = best_top(use, chart)) {
    out.best = chart.extract(*top);
    if (reduced) {
      // report rule indices of the caller's grammar
      for (auto& r : out.best->derivation.subtrees) r = *g.find(use.rules()[r].key);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// semantic rewrite

/// Rewrite-rule table: one "<rule-id> <arity> <template>" per line. The
/// template is an update expression in which $1..$k stand for the children's
/// meanings; "_" is the empty update.
class RewriteTable {
 public:
  struct Rule {
    std::size_t arity = 0;
    UpdateExpr templ;
  };

  void add(const std::string& id, std::size_t arity, UpdateExpr templ) {
    check_placeholders(templ, arity, id);
    rules_[id] = Rule{arity, std::move(templ)};
  }

  const Rule* find(const std::string& id) const {
    auto it = rules_.find(id);
    return it == rules_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return rules_.size(); }

  /// Fills the template's placeholders with `children`.
  static UpdateExpr instantiate(const UpdateExpr& templ, const std::vector<UpdateExpr>& children) {
    UpdateExpr out;
    for (const auto& term : templ.terms) {
      if (term.segments.size() == 1 && placeholder(term.segments[0]) > 0) {
        const UpdateExpr& c = children.at(placeholder(term.segments[0]) - 1);
        out.terms.insert(out.terms.end(), c.terms.begin(), c.terms.end());
        continue;
      }
      if (auto t = instantiate_term(term, children)) out.terms.push_back(std::move(*t));
    }
    return out;
  }

 private:
  static std::size_t placeholder(const Segment& s) {
    if (s.kind != Segment::Kind::Atom || s.atom.size() < 2 || s.atom[0] != '$') return 0;
    std::size_t v = 0;
    for (std::size_t i = 1; i < s.atom.size(); ++i) {
      if (s.atom[i] < '0' || s.atom[i] > '9') return 0;
      v = v * 10 + static_cast<std::size_t>(s.atom[i] - '0');
    }
    return v;
  }

  static std::optional<Term> instantiate_term(const Term& term, const std::vector<UpdateExpr>& children) {
    Term out;
    for (const auto& seg : term.segments) {
      if (std::size_t k = placeholder(seg)) {
        const UpdateExpr& c = children.at(k - 1);
        if (c.empty()) return std::nullopt;
        if (c.terms.size() == 1)
          out.segments.insert(out.segments.end(), c.terms[0].segments.begin(), c.terms[0].segments.end());
        else
          out.segments.push_back(Segment::wrap(Segment::Kind::Group, c));
        continue;
      }
      if (seg.kind == Segment::Kind::Atom) {
        out.segments.push_back(seg);
        continue;
      }
      UpdateExpr inner = instantiate(seg.inner.front(), children);
      if (inner.empty()) return std::nullopt;
      out.segments.push_back(Segment::wrap(seg.kind, std::move(inner)));
    }
    return out;
  }

  static void check_placeholders(const UpdateExpr& e, std::size_t arity, const std::string& id) {
    for (const auto& t : e.terms)
      for (const auto& s : t.segments) {
        if (std::size_t k = placeholder(s); k > arity)
          throw ConfigError("rule '" + id + "' refers to $" + std::to_string(k) + " but has arity " +
                            std::to_string(arity));
        if (s.kind != Segment::Kind::Atom) check_placeholders(s.inner.front(), arity, id);
      }
  }

  std::map<std::string, Rule> rules_;
};

inline RewriteTable read_rewrite_table(std::string_view text) {
  RewriteTable table;
  for (auto [lineno, raw] : detail::numbered_lines(text)) {
    auto toks = detail::split_ws(raw);
    if (toks.empty() || toks[0].front() == '#') continue;
    if (toks.size() < 3) throw ParseError("rule must read '<rule-id> <arity> <template>'", lineno);
    auto arity = detail::parse_int<std::size_t>(toks[1], lineno, "arity");
    auto templ_begin = static_cast<std::size_t>(toks[2].data() - raw.data());
    std::string_view templ = raw.substr(templ_begin);
    while (!templ.empty() && (templ.back() == '\r' || templ.back() == ' ')) templ.remove_suffix(1);
    try {
      table.add(std::string(toks[0]), arity, templ == "_" ? UpdateExpr{} : parse_update(templ));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return table;
}

/// Applies each node's rule to its children's meanings, bottom-up. A word
/// means the atom it spells.
inline UpdateExpr derive_update(const Tree& tree, const RewriteTable& rules) {
  auto meaning = [&](const auto& self, const Tree& n, const std::string& where) -> UpdateExpr {
    if (n.is_word()) return UpdateExpr::atom(*n.word);
    if (n.is_site()) throw SemanticError("open substitution site '" + n.label + "' at " + where);
    if (n.semrule.empty())
      throw SemanticError("node '" + node_head(n) + "' at " + where + " has no semantic rule");
    const RewriteTable::Rule* r = rules.find(n.semrule);
    if (!r) throw SemanticError("node '" + node_head(n) + "' at " + where + ": unknown rule '" + n.semrule + "'");
    if (r->arity != n.children.size())
      throw SemanticError("node '" + node_head(n) + "' at " + where + ": rule '" + n.semrule +
                          "' has arity " + std::to_string(r->arity) + " but the node has " +
                          std::to_string(n.children.size()) + " children");
    std::vector<UpdateExpr> kids;
    for (std::size_t i = 0; i < n.children.size(); ++i)
      kids.push_back(self(self, n.children[i], where + "." + std::to_string(i + 1)));
    return RewriteTable::instantiate(r->templ, kids);
  };
  return meaning(meaning, tree, "root");
}

inline UpdateExpr derive_update(const Derivation& d, const RewriteTable& rules) {
  return derive_update(d.tree, rules);
}

}  // namespace wgp
