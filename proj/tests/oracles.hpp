#pragma once

// Random instance generators and brute-force reference implementations.
// The oracles share only data types with the library: paths, fragments and
// derivations are enumerated by plain recursion.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <tuple>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "wgp/wgp.hpp"

namespace oracle {

using wgp::Transition;
using wgp::Tree;
using wgp::WordGraph;
using wgp::Words;

// ---------------------------------------------------------------------------
// word graphs

struct GraphSpec {
  int states = 6;
  int epsilons = 0;
  std::vector<std::string> vocab{"a", "b", "c"};
  double extra_arcs = 1.5;  // expected extra arcs per state
};

/// Costs are multiples of 1/8 so path sums are exact.
inline double dyadic(std::mt19937& rng, int max_eighths = 24) {
  return std::uniform_int_distribution<int>(0, max_eighths)(rng) / 8.0;
}

/// Random DAG on 0..states-1 with a backbone 0->1->...->n-1, start 0 and a
/// random non-empty final set that includes n-1. Epsilon transitions are
/// placed so that no start-to-final path is all epsilon.
inline WordGraph random_graph(std::mt19937& rng, const GraphSpec& spec) {
  const int n = std::max(2, spec.states);
  std::uniform_int_distribution<std::size_t> word(0, spec.vocab.size() - 1);
  std::vector<Transition> ts;
  std::set<std::tuple<int, int, std::string>> seen;
  auto add = [&](int a, int b, std::string label) {
    if (!seen.insert({a, b, label}).second) return;
    ts.push_back({a, b, std::move(label), dyadic(rng)});
  };
  for (int i = 0; i + 1 < n; ++i) add(i, i + 1, spec.vocab[word(rng)]);
  std::uniform_int_distribution<int> st(0, n - 1);
  int extra = static_cast<int>(spec.extra_arcs * n);
  for (int k = 0; k < extra; ++k) {
    int a = st(rng), b = st(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    add(a, b, spec.vocab[word(rng)]);
  }
  std::set<int> finals{n - 1};
  if (n > 2 && std::bernoulli_distribution(0.3)(rng)) finals.insert(st(rng) % (n - 1) + 1);
  // epsilons never leave the start state, so every path starts with a word
  for (int e = 0; e < spec.epsilons; ++e) {
    int a = std::uniform_int_distribution<int>(1, n - 1)(rng);
    int b = std::uniform_int_distribution<int>(0, n - 1)(rng);
    if (a >= b) continue;
    add(a, b, "");
  }
  return WordGraph(0, finals, ts);
}

/// Every start-to-final path as a list of transition indices.
inline std::vector<std::vector<std::size_t>> all_paths(const WordGraph& g) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  std::function<void(wgp::StateId)> walk = [&](wgp::StateId s) {
    if (g.is_final(s)) out.push_back(cur);
    for (std::size_t t = 0; t < g.transitions().size(); ++t) {
      if (g.transitions()[t].from != s) continue;
      cur.push_back(t);
      walk(g.transitions()[t].to);
      cur.pop_back();
    }
  };
  walk(g.start());
  return out;
}

inline Words path_words(const WordGraph& g, const std::vector<std::size_t>& p) {
  Words w;
  for (std::size_t t : p)
    if (!g.transitions()[t].label.empty()) w.push_back(g.transitions()[t].label);
  return w;
}

inline double path_cost(const WordGraph& g, const std::vector<std::size_t>& p) {
  double c = 0.0;
  for (std::size_t t : p) c += g.transitions()[t].cost;
  return c;
}

/// Word sequence -> minimum total cost over the paths spelling it.
inline std::map<Words, double> weighted_language(const WordGraph& g) {
  std::map<Words, double> out;
  for (const auto& p : all_paths(g)) {
    Words w = path_words(g, p);
    double c = path_cost(g, p);
    auto it = out.find(w);
    if (it == out.end() || c < it->second) out[w] = c;
  }
  return out;
}

inline std::size_t count_paths(const WordGraph& g, wgp::StateId s) {
  std::size_t n = g.is_final(s) ? 1 : 0;
  for (const auto& t : g.transitions())
    if (t.from == s) n += count_paths(g, t.to);
  return n;
}

inline std::size_t edit_distance(const Words& a, const Words& b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  Words a1(a.begin() + 1, a.end()), b1(b.begin() + 1, b.end());
  return std::min({edit_distance(a1, b) + 1, edit_distance(a, b1) + 1,
                   edit_distance(a1, b1) + (a[0] == b[0] ? 0 : 1)});
}

// ---------------------------------------------------------------------------
// treebanks and fragments

struct TreeSpec {
  std::vector<std::string> categories{"S", "A", "B"};
  std::vector<std::string> words{"a", "b"};
  int max_nodes = 12;
  int max_children = 3;
  bool semantic = false;
  int types = 2;  // meet values drawn from 1..types
};

inline Tree random_tree(std::mt19937& rng, const TreeSpec& spec, const std::string& root) {
  int budget = spec.max_nodes - 1;
  std::uniform_int_distribution<std::size_t> cat(0, spec.categories.size() - 1);
  std::uniform_int_distribution<std::size_t> word(0, spec.words.size() - 1);
  std::uniform_int_distribution<int> type(1, spec.types);
  std::function<Tree(const std::string&, int)> grow = [&](const std::string& label, int depth) {
    Tree t = Tree::node(label, {});
    if (spec.semantic) {
      t.semtype = wgp::SemType{type(rng), 1};
      t.semrule = "r" + std::to_string(std::uniform_int_distribution<int>(1, 3)(rng));
    }
    bool preterminal = budget < 2 || depth >= 4 || std::bernoulli_distribution(0.4)(rng);
    if (preterminal) {
      t.children.push_back(Tree::leaf(spec.words[word(rng)]));
      --budget;
      return t;
    }
    int k = std::uniform_int_distribution<int>(1, spec.max_children)(rng);
    for (int i = 0; i < k && budget > 1; ++i) {
      --budget;
      t.children.push_back(grow(spec.categories[cat(rng)], depth + 1));
    }
    if (t.children.empty()) t.children.push_back(Tree::leaf(spec.words[word(rng)]));
    return t;
  };
  return grow(root, 0);
}

inline std::vector<Tree> random_treebank(std::mt19937& rng, const TreeSpec& spec, int max_trees) {
  int n = std::uniform_int_distribution<int>(1, max_trees)(rng);
  std::vector<Tree> out;
  for (int i = 0; i < n; ++i) out.push_back(random_tree(rng, spec, spec.categories.front()));
  return out;
}

struct FragmentInfo {
  Tree tree;
  int depth = 0;
  int lexical = 0;
  int sites = 0;
  int longest_run = 0;
};

inline FragmentInfo describe(const Tree& f) {
  FragmentInfo info{f, wgp::tree_depth(f), 0, 0, 0};
  int run = 0;
  std::function<void(const Tree&)> walk = [&](const Tree& n) {
    if (n.is_word()) {
      ++info.lexical;
      info.longest_run = std::max(info.longest_run, ++run);
      return;
    }
    if (n.is_site()) {
      ++info.sites;
      run = 0;
      return;
    }
    for (const auto& c : n.children) walk(c);
  };
  walk(f);
  return info;
}

/// All fragments rooted at `node`: each internal child is either cut to a
/// site or expanded recursively.
inline std::vector<Tree> fragments_at(const Tree& node) {
  std::vector<std::vector<Tree>> options;
  for (const auto& c : node.children) {
    if (c.is_word()) {
      options.push_back({c});
      continue;
    }
    std::vector<Tree> opts{Tree::site(c.label, c.semtype)};
    for (auto& f : fragments_at(c)) opts.push_back(std::move(f));
    options.push_back(std::move(opts));
  }
  std::vector<Tree> out;
  std::vector<Tree> kids;
  std::function<void(std::size_t)> pick = [&](std::size_t i) {
    if (i == options.size()) {
      Tree t = node;
      t.children = kids;
      out.push_back(std::move(t));
      return;
    }
    for (const auto& o : options[i]) {
      kids.push_back(o);
      pick(i + 1);
      kids.pop_back();
    }
  };
  pick(0);
  return out;
}

inline bool admissible(const FragmentInfo& f, const wgp::SubtreeConstraints& c) {
  if (f.depth == 1) return true;
  return f.depth <= c.d && f.lexical <= c.l && f.longest_run <= c.L && f.sites <= c.n;
}

inline std::map<std::string, std::size_t> extract(const std::vector<Tree>& trees,
                                                  const wgp::SubtreeConstraints& c) {
  std::map<std::string, std::size_t> out;
  std::function<void(const Tree&)> visit = [&](const Tree& n) {
    if (!n.is_internal()) return;
    for (const auto& f : fragments_at(n))
      if (admissible(describe(f), c)) out[wgp::to_string(f)] += 1;
    for (const auto& ch : n.children) visit(ch);
  };
  for (const auto& t : trees) visit(t);
  return out;
}

// ---------------------------------------------------------------------------
// derivations

struct Candidate {
  double logprob = 0.0;
  double acoustic = 0.0;
  std::string tree;
  std::string deriv;
  std::vector<std::size_t> rules;
};

/// Shortlex order used by the chart for tie-breaks.
inline bool shortlex_less(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

inline void collect_frontier(const Tree& t, std::vector<const Tree*>& out) {
  if (!t.is_internal()) {
    out.push_back(&t);
    return;
  }
  for (const auto& c : t.children) collect_frontier(c, out);
}

using SpanKey = std::tuple<std::string, std::size_t, std::size_t>;

/// Plain fixpoint recognizer: which (symbol, span) pairs derive anything.
class Recognizer {
 public:
  Recognizer(const wgp::SubtreeGrammar& g, const Words& words) : g_(g), words_(words) {
    frontiers_.resize(g.rules().size());
    for (std::size_t r = 0; r < g.rules().size(); ++r) collect_frontier(g.rules()[r].fragment, frontiers_[r]);
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t r = 0; r < g.rules().size(); ++r)
        for (std::size_t i = 0; i < words.size(); ++i)
          for (std::size_t j = i + 1; j <= words.size(); ++j) {
            SpanKey key{g.rules()[r].root_symbol, i, j};
            if (derivable_.count(key) || !can_match(frontiers_[r], 0, i, j)) continue;
            derivable_.insert(key);
            changed = true;
          }
    }
  }

  bool derivable(const SpanKey& k) const { return derivable_.count(k) > 0; }
  const std::vector<const Tree*>& frontier(std::size_t r) const { return frontiers_[r]; }

 private:
  bool can_match(const std::vector<const Tree*>& frontier, std::size_t k, std::size_t i, std::size_t j) const {
    if (k == frontier.size()) return i == j;
    const Tree* f = frontier[k];
    if (f->is_word()) return i < j && words_[i] == *f->word && can_match(frontier, k + 1, i + 1, j);
    std::string sym = wgp::nonterminal_key(*f, g_.semantic());
    for (std::size_t m = i + 1; m <= j; ++m)
      if (derivable_.count({sym, i, m}) && can_match(frontier, k + 1, m, j)) return true;
    return false;
  }

  const wgp::SubtreeGrammar& g_;
  const Words& words_;
  std::vector<std::vector<const Tree*>> frontiers_;
  std::set<SpanKey> derivable_;
};

/// Thrown when an enumeration exceeds its candidate budget.
struct TooMany {};

/// Shared recursion of the two derivation oracles: every rule at a (symbol,
/// span), every split of its frontier, never repeating a (symbol, span) on
/// the current chain; a repeat only adds factors <= 1 and length, so the
/// maximum lies among the remaining derivations. `Keep` filters each list
/// (identity for full enumeration).
template <typename Keep>
class Search {
 public:
  Search(const wgp::SubtreeGrammar& g, const Words& words, Keep keep, std::size_t budget)
      : g_(g), words_(words), rec_(g, words), keep_(keep), budget_(budget) {
    for (std::size_t r = 0; r < g.rules().size(); ++r) by_symbol_[g.rules()[r].root_symbol].push_back(r);
  }

  std::vector<Candidate> derive(const std::string& sym, std::size_t i, std::size_t j) {
    std::vector<Candidate> out;
    SpanKey key{sym, i, j};
    if (stack_.count(key) || !rec_.derivable(key)) return out;
    if (auto m = memo_.find(key); m != memo_.end()) return m->second;
    // only same-span ancestors (unary chains) can cut anything from this list
    bool fresh = true;
    for (const auto& [s2, i2, j2] : stack_) fresh = fresh && !(i2 == i && j2 == j);
    stack_.insert(key);
    auto it = by_symbol_.find(sym);
    if (it != by_symbol_.end())
      for (std::size_t r : it->second)
        for (auto& c : match(rec_.frontier(r), 0, i, j)) {
          Candidate full;
          full.logprob = g_.rules()[r].logprob + c.logprob;
          full.rules.push_back(r);
          full.rules.insert(full.rules.end(), c.rules.begin(), c.rules.end());
          spend();
          out.push_back(std::move(full));
        }
    stack_.erase(key);
    out = keep_(std::move(out), true);
    if (fresh) memo_[key] = out;
    return out;
  }

 private:
  void spend() {
    if (++spent_ > budget_) throw TooMany{};
  }

  // combinations of frontier[k..] covering words[i, j)
  std::vector<Candidate> match(const std::vector<const Tree*>& frontier, std::size_t k, std::size_t i,
                               std::size_t j) {
    if (k == frontier.size()) {
      if (i == j) return {Candidate{}};
      return {};
    }
    std::vector<Candidate> out;
    const Tree* f = frontier[k];
    if (f->is_word()) {
      if (i < j && words_[i] == *f->word) out = match(frontier, k + 1, i + 1, j);
      return out;
    }
    std::string sym = wgp::nonterminal_key(*f, g_.semantic());
    for (std::size_t m = i + 1; m <= j; ++m) {
      if (!rec_.derivable({sym, i, m})) continue;
      auto heads = derive(sym, i, m);
      if (heads.empty()) continue;
      auto tails = match(frontier, k + 1, m, j);
      for (const auto& h : heads)
        for (const auto& t : tails) {
          Candidate c;
          c.logprob = h.logprob + t.logprob;
          c.rules = h.rules;
          c.rules.insert(c.rules.end(), t.rules.begin(), t.rules.end());
          spend();
          out.push_back(std::move(c));
        }
    }
    return keep_(std::move(out), false);
  }

  const wgp::SubtreeGrammar& g_;
  const Words& words_;
  Recognizer rec_;
  Keep keep_;
  std::size_t budget_, spent_ = 0;
  std::map<SpanKey, std::vector<Candidate>> memo_;
  std::map<std::string, std::vector<std::size_t>> by_symbol_;
  std::set<SpanKey> stack_;
};

inline void fill_strings(const wgp::SubtreeGrammar& g, Candidate& c) {
  c.deriv = g.rules()[c.rules[0]].key;
  for (std::size_t k = 1; k < c.rules.size(); ++k) c.deriv += ' ' + g.rules()[c.rules[k]].key;
  c.tree = wgp::to_string(wgp::compose(g, c.rules));
}

inline std::set<std::string> start_symbols(const wgp::SubtreeGrammar& g) {
  std::set<std::string> starts;
  for (const auto& r : g.rules()) {
    std::string cat = r.root_symbol.substr(0, r.root_symbol.find(':'));
    if (r.root_symbol == g.start() || cat == g.start()) starts.insert(r.root_symbol);
  }
  return starts;
}

/// Every derivation of the whole sentence from any start symbol. Throws
/// TooMany past `budget` intermediate candidates.
inline std::vector<Candidate> sentence_derivations(const wgp::SubtreeGrammar& g, const Words& words,
                                                   bool with_strings = true,
                                                   std::size_t budget = std::numeric_limits<std::size_t>::max()) {
  auto all = [](std::vector<Candidate> v, bool) { return v; };
  Search<decltype(all)> en(g, words, all, budget);
  std::vector<Candidate> out;
  for (const auto& s : start_symbols(g))
    for (auto& c : en.derive(s, 0, words.size())) {
      if (with_strings) fill_strings(g, c);
      out.push_back(std::move(c));
    }
  return out;
}

/// Same search, but every list keeps only candidates whose log probability
/// is within `tol` of its maximum: a derivation whose sub-derivation at some
/// (symbol, span) is not maximal can be improved by exchanging it, so the
/// maximal derivations, ties included, survive.
inline std::vector<Candidate> tied_derivations(const wgp::SubtreeGrammar& g, const Words& words,
                                               double tol = 1e-12) {
  auto keep = [tol](std::vector<Candidate> v, bool) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : v) best = std::max(best, c.logprob);
    std::vector<Candidate> out;
    for (auto& c : v)
      if (c.logprob >= best - tol * std::max(1.0, std::abs(best))) out.push_back(std::move(c));
    return out;
  };
  Search<decltype(keep)> en(g, words, keep, std::numeric_limits<std::size_t>::max());
  std::vector<Candidate> out;
  for (const auto& s : start_symbols(g))
    for (auto& c : en.derive(s, 0, words.size())) {
      fill_strings(g, c);
      out.push_back(std::move(c));
    }
  return out;
}

/// Best candidate under score descending (ties within `tol` relative), then
/// shortlex tree, then shortlex derivation.
template <typename Score>
const Candidate* best_candidate(const std::vector<Candidate>& cs, Score score, double tol = 1e-12) {
  const Candidate* best = nullptr;
  for (const auto& c : cs) {
    if (!best) {
      best = &c;
      continue;
    }
    double a = score(c), b = score(*best);
    double scale = std::max({1.0, std::abs(a), std::abs(b)});
    if (a > b + tol * scale) {
      best = &c;
    } else if (std::abs(a - b) <= tol * scale) {
      if (shortlex_less(c.tree, best->tree) || (c.tree == best->tree && shortlex_less(c.deriv, best->deriv)))
        best = &c;
    }
  }
  return best;
}

/// Random grammar with at most `max_rules` subtrees: fragments extracted
/// from a small random treebank, trimmed by dropping whole trees.
inline std::optional<wgp::SubtreeGrammar> random_grammar(std::mt19937& rng, const TreeSpec& spec,
                                                         std::size_t max_rules, bool semantic,
                                                         wgp::SubtreeConstraints c = {}) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    auto bank = random_treebank(rng, spec, 3);
    while (!bank.empty()) {
      auto ms = wgp::extract_subtrees(bank, c);
      if (ms.entries.size() <= max_rules) return wgp::build_grammar(ms, spec.categories.front(), semantic);
      bank.pop_back();
    }
  }
  return std::nullopt;
}

inline std::vector<Words> all_sentences(const std::vector<std::string>& vocab, std::size_t max_len) {
  std::vector<Words> out;
  std::vector<Words> layer{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<Words> next;
    for (const auto& s : layer)
      for (const auto& w : vocab) {
        Words t = s;
        t.push_back(w);
        next.push_back(t);
      }
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return out;
}

inline std::vector<std::string> terminals(const wgp::SubtreeGrammar& g) {
  std::set<std::string> w;
  for (const auto& r : g.rules())
    for (const auto& x : wgp::yield(r.fragment)) w.insert(x);
  return {w.begin(), w.end()};
}

/// Exhaustive best combined score over (path, derivation) pairs; nullopt
/// when no path is derivable.
inline std::optional<double> best_intersection(const wgp::SubtreeGrammar& g, const WordGraph& wg,
                                               double lambda) {
  std::optional<double> best;
  for (const auto& p : all_paths(wg)) {
    Words w = path_words(wg, p);
    if (w.empty()) continue;
    double ac = path_cost(wg, p);
    for (const auto& c : tied_derivations(g, w)) {
      double s = (1.0 - lambda) * -ac + lambda * c.logprob;
      if (!best || s > *best) best = s;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// skip paths

struct StepOracle {
  double weight;
  std::size_t skips;
  Words words;
  std::size_t steps;
};

inline bool step_less(const StepOracle& a, const StepOracle& b) {
  if (a.weight != b.weight) return a.weight < b.weight;
  if (a.skips != b.skips) return a.skips < b.skips;
  if (a.words != b.words) return a.words < b.words;
  return a.steps < b.steps;
}

/// Every contiguous start-to-final sequence of edges and transitions.
inline std::vector<StepOracle> all_step_sequences(const WordGraph& wg, const std::vector<wgp::CategoryEdge>& edges,
                                                  const wgp::WeightConfig& w, const wgp::NgramModel& m) {
  std::vector<StepOracle> out;
  double acoustic = 0.0;
  std::size_t skips = 0, projections = 0;
  Words words;
  std::size_t steps = 0;
  std::function<void(wgp::StateId)> walk = [&](wgp::StateId s) {
    if (wg.is_final(s)) {
      double lm = wgp::score_sequence(m, words);
      out.push_back({w.w_acoustic * acoustic + w.w_skip * static_cast<double>(skips) +
                         w.w_proj * static_cast<double>(projections) + w.w_ngram * lm,
                     skips, words, steps});
    }
    for (const auto& t : wg.transitions()) {
      if (t.from != s) continue;
      acoustic += t.cost;
      ++skips;
      ++steps;
      if (!t.label.empty()) words.push_back(t.label);
      walk(t.to);
      if (!t.label.empty()) words.pop_back();
      --steps;
      --skips;
      acoustic -= t.cost;
    }
    for (const auto& e : edges) {
      if (e.from != s) continue;
      acoustic += e.acoustic;
      ++projections;
      ++steps;
      words.insert(words.end(), e.words.begin(), e.words.end());
      walk(e.to);
      words.resize(words.size() - e.words.size());
      --steps;
      --projections;
      acoustic -= e.acoustic;
    }
  };
  walk(wg.start());
  return out;
}

}  // namespace oracle
