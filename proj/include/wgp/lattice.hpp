#pragma once

// Word graphs: acyclic lattices of word hypotheses with acoustic costs.
//
// States are integers and the integer order is the time order, so every
// transition must satisfy from < to. Costs are negative log-likelihoods
// (lower is better). An empty label denotes an epsilon transition; the
// text format writes it as "(eps)".

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "wgp/error.hpp"

namespace wgp {

using StateId = int;
using Words = std::vector<std::string>;

inline constexpr std::string_view kEpsilonToken = "(eps)";

struct Transition {
  StateId from = 0;
  StateId to = 0;
  std::string label;  // empty = epsilon
  double cost = 0.0;

  bool is_epsilon() const { return label.empty(); }

  friend bool operator==(const Transition&, const Transition&) = default;
};

inline bool transition_less(const Transition& a, const Transition& b) {
  return std::tie(a.from, a.to, a.label, a.cost) < std::tie(b.from, b.to, b.label, b.cost);
}

/// Converts a recognizer confidence in (0, 1] to a cost.
inline double cost_from_confidence(double confidence) {
  if (!(confidence > 0.0) || confidence > 1.0)
    throw GraphError("confidence must lie in (0, 1]");
  return -std::log(confidence);
}

class WordGraph {
 public:
  WordGraph() = default;

  /// Validates, prunes states that are not on a start-to-final path and
  /// stores transitions in canonical (from, to, label, cost) order.
  WordGraph(StateId start, std::set<StateId> finals, std::vector<Transition> transitions)
      : start_(start) {
    if (finals.empty()) throw GraphError("word graph has no final state");
    for (const auto& t : transitions) {
      if (t.from >= t.to)
        throw GraphError("transition " + std::to_string(t.from) + "->" + std::to_string(t.to) +
                         " violates time order (cycle)");
      if (!std::isfinite(t.cost) || t.cost < 0.0)
        throw GraphError("transition " + std::to_string(t.from) + "->" + std::to_string(t.to) +
                         " has invalid cost");
    }

    // forward reachability; transitions sorted by from make one pass enough
    std::sort(transitions.begin(), transitions.end(), transition_less);
    std::set<StateId> reach{start};
    for (const auto& t : transitions)
      if (reach.count(t.from)) reach.insert(t.to);
    std::set<StateId> coreach;
    for (StateId f : finals)
      if (reach.count(f)) coreach.insert(f);
    for (auto it = transitions.rbegin(); it != transitions.rend(); ++it)
      if (coreach.count(it->to) && reach.count(it->from)) coreach.insert(it->from);
    if (!coreach.count(start)) throw GraphError("word graph has no start-to-final path");

    for (auto& t : transitions)
      if (coreach.count(t.from) && coreach.count(t.to)) transitions_.push_back(std::move(t));
    for (StateId f : finals)
      if (coreach.count(f)) finals_.insert(f);
    states_.assign(coreach.begin(), coreach.end());
    index_reindex();
  }

  StateId start() const { return start_; }
  const std::set<StateId>& finals() const { return finals_; }
  const std::vector<StateId>& states() const { return states_; }
  const std::vector<Transition>& transitions() const { return transitions_; }
  std::size_t num_states() const { return states_.size(); }
  std::size_t num_transitions() const { return transitions_.size(); }

  bool is_final(StateId s) const { return finals_.count(s) != 0; }

  /// Position of `s` in states(); states() is in time order.
  std::size_t index_of(StateId s) const { return index_.at(s); }

  /// Transition indices leaving the state at position `state_index`.
  const std::vector<std::size_t>& outgoing(std::size_t state_index) const {
    return outgoing_[state_index];
  }

  bool has_epsilons() const {
    return std::any_of(transitions_.begin(), transitions_.end(),
                       [](const Transition& t) { return t.is_epsilon(); });
  }

  friend bool operator==(const WordGraph& a, const WordGraph& b) {
    return a.start_ == b.start_ && a.finals_ == b.finals_ && a.transitions_ == b.transitions_ &&
           a.states_ == b.states_;
  }

 private:
  void index_reindex() {
    index_.clear();
    for (std::size_t i = 0; i < states_.size(); ++i) index_[states_[i]] = i;
    outgoing_.assign(states_.size(), {});
    for (std::size_t t = 0; t < transitions_.size(); ++t)
      outgoing_[index_.at(transitions_[t].from)].push_back(t);
  }

  StateId start_ = 0;
  std::set<StateId> finals_;
  std::vector<StateId> states_;
  std::vector<Transition> transitions_;
  std::unordered_map<StateId, std::size_t> index_;
  std::vector<std::vector<std::size_t>> outgoing_;
};

struct LatticePath {
  std::vector<std::size_t> transitions;  // indices into WordGraph::transitions()
  Words words;                           // labels without epsilons
  double acoustic_total = 0.0;

  friend bool operator==(const LatticePath&, const LatticePath&) = default;
};

/// Total order used for every path tie-break: cost, then words, then length.
inline bool path_less(const LatticePath& a, const LatticePath& b) {
  if (a.acoustic_total != b.acoustic_total) return a.acoustic_total < b.acoustic_total;
  if (a.words != b.words) return a.words < b.words;
  return a.transitions.size() < b.transitions.size();
}

/// Builds a path from transition indices, validating contiguity.
inline LatticePath make_path(const WordGraph& g, std::vector<std::size_t> transitions) {
  LatticePath p;
  StateId at = g.start();
  for (std::size_t t : transitions) {
    const Transition& tr = g.transitions().at(t);
    if (tr.from != at) throw GraphError("path is not contiguous");
    at = tr.to;
    if (!tr.is_epsilon()) p.words.push_back(tr.label);
    p.acoustic_total += tr.cost;
  }
  if (!g.is_final(at)) throw GraphError("path does not end in a final state");
  p.transitions = std::move(transitions);
  return p;
}

// ---------------------------------------------------------------------------
// text format

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string_view strip_comment(std::string_view line) {
  auto pos = line.find('#');
  return pos == std::string_view::npos ? line : line.substr(0, pos);
}

template <typename Int>
Int parse_int(std::string_view tok, std::size_t line, const char* what) {
  Int v{};
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw ParseError(std::string("expected integer ") + what + ", got '" + std::string(tok) + "'",
                     line);
  return v;
}

inline double parse_double(std::string_view tok, std::size_t line, const char* what) {
  double v{};
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw ParseError(std::string("expected number ") + what + ", got '" + std::string(tok) + "'",
                     line);
  return v;
}

/// Shortest decimal form that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::vector<std::pair<std::size_t, std::string_view>> numbered_lines(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> out;
  std::size_t lineno = 0, pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++lineno;
    out.emplace_back(lineno, text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

struct GraphDraft {
  std::size_t header_line = 0;
  StateId start = 0;
  std::set<StateId> finals;
  std::vector<Transition> transitions;
};

inline WordGraph finish_draft(const GraphDraft& d) {
  try {
    return WordGraph(d.start, d.finals, d.transitions);
  } catch (const GraphError& e) {
    throw GraphError("graph at line " + std::to_string(d.header_line) + ": " + e.what());
  }
}

inline std::vector<GraphDraft> read_drafts(std::string_view text) {
  std::vector<GraphDraft> drafts;
  for (auto [lineno, raw] : numbered_lines(text)) {
    auto toks = split_ws(strip_comment(raw));
    if (toks.empty()) continue;
    if (toks[0] == "WG") {
      if (toks.size() < 4 || toks[2] != "FINAL")
        throw ParseError("header must read 'WG <start> FINAL <id>...'", lineno);
      GraphDraft d;
      d.header_line = lineno;
      d.start = parse_int<StateId>(toks[1], lineno, "start state");
      for (std::size_t i = 3; i < toks.size(); ++i)
        d.finals.insert(parse_int<StateId>(toks[i], lineno, "final state"));
      drafts.push_back(std::move(d));
      continue;
    }
    if (drafts.empty()) throw ParseError("transition before 'WG' header", lineno);
    if (toks.size() != 4) throw ParseError("transition must read '<from> <to> <label> <cost>'", lineno);
    Transition t;
    t.from = parse_int<StateId>(toks[0], lineno, "from state");
    t.to = parse_int<StateId>(toks[1], lineno, "to state");
    if (toks[2] != kEpsilonToken) t.label = std::string(toks[2]);
    t.cost = parse_double(toks[3], lineno, "cost");
    if (t.from >= t.to)
      throw GraphError("line " + std::to_string(lineno) + ": transition " + std::to_string(t.from) +
                       "->" + std::to_string(t.to) + " violates time order (cycle)");
    if (!std::isfinite(t.cost) || t.cost < 0.0)
      throw ParseError("cost must be finite and non-negative", lineno);
    drafts.back().transitions.push_back(std::move(t));
  }
  return drafts;
}

}  // namespace detail

/// Reads exactly one graph.
inline WordGraph read_wordgraph(std::string_view text) {
  auto drafts = detail::read_drafts(text);
  if (drafts.empty()) throw ParseError("missing 'WG' header");
  if (drafts.size() > 1) throw ParseError("more than one graph", drafts[1].header_line);
  return detail::finish_draft(drafts.front());
}

/// Reads a concatenation of graphs, each introduced by its own header.
inline std::vector<WordGraph> read_wordgraph_set(std::string_view text) {
  std::vector<WordGraph> out;
  for (const auto& d : detail::read_drafts(text)) out.push_back(detail::finish_draft(d));
  return out;
}

inline std::string write_wordgraph(const WordGraph& g) {
  std::string out = "WG " + std::to_string(g.start()) + " FINAL";
  for (StateId f : g.finals()) out += " " + std::to_string(f);
  out += '\n';
  for (const auto& t : g.transitions()) {
    out += std::to_string(t.from) + ' ' + std::to_string(t.to) + ' ';
    out += t.is_epsilon() ? std::string(kEpsilonToken) : t.label;
    out += ' ' + detail::format_double(t.cost) + '\n';
  }
  return out;
}

/// Linear chain over `words` with uniform cost per transition.
inline WordGraph make_chain(const Words& words, double cost = 0.0) {
  std::vector<Transition> ts;
  for (std::size_t i = 0; i < words.size(); ++i)
    ts.push_back({static_cast<StateId>(i), static_cast<StateId>(i + 1), words[i], cost});
  return WordGraph(0, {static_cast<StateId>(words.size())}, std::move(ts));
}

// ---------------------------------------------------------------------------
// epsilon removal

/// Removes epsilon transitions. Every word transition q->r is extended over
/// epsilon runs ending in q, and over runs from r to a final state;
/// duplicates keep the minimum cost. The format has no final weights, so a
/// start-to-final path made only of epsilons is represented by making the
/// start state final (cost 0).
inline WordGraph normalize_epsilons(const WordGraph& g) {
  if (!g.has_epsilons()) return g;
  const std::size_t n = g.num_states();
  const auto& ts = g.transitions();
  constexpr double inf = std::numeric_limits<double>::infinity();

  // eps[i][j]: min cost of an epsilon-only path from state i to state j
  std::vector<std::vector<double>> eps(n, std::vector<double>(n, inf));
  for (std::size_t i = n; i-- > 0;) {
    eps[i][i] = 0.0;
    for (std::size_t t : g.outgoing(i)) {
      if (!ts[t].is_epsilon()) continue;
      std::size_t r = g.index_of(ts[t].to);
      for (std::size_t j = r; j < n; ++j)
        eps[i][j] = std::min(eps[i][j], ts[t].cost + eps[r][j]);
    }
  }

  std::map<std::tuple<StateId, StateId, std::string>, double> best;
  for (const auto& t : ts) {
    if (t.is_epsilon()) continue;
    std::size_t q = g.index_of(t.from), r = g.index_of(t.to);
    for (std::size_t p = 0; p <= q; ++p) {
      if (eps[p][q] == inf) continue;
      // a trailing epsilon run is folded in only when it reaches a final
      for (std::size_t rr = r; rr < n; ++rr) {
        if (eps[r][rr] == inf || (rr != r && !g.is_final(g.states()[rr]))) continue;
        double c = eps[p][q] + t.cost + eps[r][rr];
        auto key = std::make_tuple(g.states()[p], g.states()[rr], t.label);
        auto it = best.find(key);
        if (it == best.end() || c < it->second) best[key] = c;
      }
    }
  }

  std::set<StateId> finals = g.finals();
  std::size_t s0 = g.index_of(g.start());
  for (StateId f : g.finals())
    if (eps[s0][g.index_of(f)] < inf) finals.insert(g.start());

  std::vector<Transition> out;
  for (const auto& [key, c] : best)
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), c});
  return WordGraph(g.start(), std::move(finals), std::move(out));
}

// ---------------------------------------------------------------------------
// path search

/// All start-to-final paths in path_less order, at most `limit` of them.
/// Best-first expansion; costs are non-negative so complete paths pop in
/// order.
inline std::vector<LatticePath> enumerate_paths(const WordGraph& g, std::size_t limit) {
  std::vector<LatticePath> out;
  if (limit == 0) return out;
  struct Partial {
    LatticePath path;
    std::size_t state;  // index
  };
  auto worse = [](const Partial& a, const Partial& b) { return path_less(b.path, a.path); };
  std::priority_queue<Partial, std::vector<Partial>, decltype(worse)> queue(worse);
  queue.push({LatticePath{}, g.index_of(g.start())});
  const auto& ts = g.transitions();
  while (!queue.empty() && out.size() < limit) {
    Partial cur = queue.top();
    queue.pop();
    if (g.is_final(g.states()[cur.state])) out.push_back(cur.path);
    for (std::size_t t : g.outgoing(cur.state)) {
      Partial next = cur;
      next.path.transitions.push_back(t);
      if (!ts[t].is_epsilon()) next.path.words.push_back(ts[t].label);
      next.path.acoustic_total += ts[t].cost;
      next.state = g.index_of(ts[t].to);
      queue.push(std::move(next));
    }
  }
  return out;
}

/// Minimum-cost path; ties go to the lexicographically smallest words, then
/// fewer transitions. Suffixes are optimized backwards so that prepending a
/// word keeps the lexicographic order intact.
inline LatticePath best_path_acoustic(const WordGraph& g) {
  const std::size_t n = g.num_states();
  const auto& ts = g.transitions();
  struct Suffix {
    bool valid = false;
    double cost = 0.0;
    Words words;
    std::size_t ntrans = 0;
    std::optional<std::size_t> next;
  };
  auto better = [](const Suffix& a, const Suffix& b) {
    if (!b.valid) return a.valid;
    if (!a.valid) return false;
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.words != b.words) return a.words < b.words;
    return a.ntrans < b.ntrans;
  };
  std::vector<Suffix> best(n);
  for (std::size_t i = n; i-- > 0;) {
    if (g.is_final(g.states()[i])) best[i] = Suffix{true, 0.0, {}, 0, std::nullopt};
    for (std::size_t t : g.outgoing(i)) {
      const Suffix& rest = best[g.index_of(ts[t].to)];
      if (!rest.valid) continue;
      Suffix cand{true, ts[t].cost + rest.cost, {}, rest.ntrans + 1, t};
      if (!ts[t].is_epsilon()) cand.words.push_back(ts[t].label);
      cand.words.insert(cand.words.end(), rest.words.begin(), rest.words.end());
      if (better(cand, best[i])) best[i] = std::move(cand);
    }
  }
  std::vector<std::size_t> chosen;
  for (std::size_t i = g.index_of(g.start()); best[i].next;) {
    chosen.push_back(*best[i].next);
    i = g.index_of(ts[*best[i].next].to);
  }
  return make_path(g, std::move(chosen));
}

struct OraclePath {
  LatticePath path;
  std::size_t distance = 0;
};

/// Path whose words are closest to `reference` in edit distance; ties go to
/// lower acoustic cost, then the path_less order on words and length.
inline OraclePath oracle_path(const WordGraph& g, const Words& reference) {
  const std::size_t n = g.num_states(), m = reference.size();
  const auto& ts = g.transitions();
  enum class Step { End, Delete, Align, Insert };
  struct Cell {
    bool valid = false;
    std::size_t dist = 0;
    double cost = 0.0;
    Words words;
    std::size_t ntrans = 0;
    Step step = Step::End;
    std::size_t trans = 0;
  };
  auto better = [](const Cell& a, const Cell& b) {
    if (!b.valid) return a.valid;
    if (!a.valid) return false;
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.words != b.words) return a.words < b.words;
    return a.ntrans < b.ntrans;
  };
  // cell[i][j]: best completion from state i having consumed j reference words
  std::vector<std::vector<Cell>> cell(n, std::vector<Cell>(m + 1));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m + 1; j-- > 0;) {
      Cell& here = cell[i][j];
      if (j == m && g.is_final(g.states()[i])) here = Cell{true, 0, 0.0, {}, 0, Step::End, 0};
      if (j < m && cell[i][j + 1].valid) {
        Cell cand = cell[i][j + 1];
        cand.dist += 1;
        cand.step = Step::Delete;
        if (better(cand, here)) here = std::move(cand);
      }
      for (std::size_t t : g.outgoing(i)) {
        std::size_t r = g.index_of(ts[t].to);
        auto extend = [&](const Cell& rest, std::size_t add, Step step) {
          if (!rest.valid) return;
          Cell cand{true, rest.dist + add, ts[t].cost + rest.cost, {}, rest.ntrans + 1, step, t};
          if (!ts[t].is_epsilon()) cand.words.push_back(ts[t].label);
          cand.words.insert(cand.words.end(), rest.words.begin(), rest.words.end());
          if (better(cand, here)) here = std::move(cand);
        };
        if (ts[t].is_epsilon()) {
          extend(cell[r][j], 0, Step::Insert);
          continue;
        }
        if (j < m) extend(cell[r][j + 1], ts[t].label == reference[j] ? 0 : 1, Step::Align);
        extend(cell[r][j], 1, Step::Insert);
      }
    }
  }
  std::size_t i = g.index_of(g.start()), j = 0;
  OraclePath out;
  out.distance = cell[i][j].dist;
  std::vector<std::size_t> chosen;
  while (cell[i][j].step != Step::End) {
    const Cell& c = cell[i][j];
    if (c.step == Step::Delete) {
      ++j;
      continue;
    }
    chosen.push_back(c.trans);
    if (c.step == Step::Align) ++j;
    i = g.index_of(ts[c.trans].to);
  }
  out.path = make_path(g, std::move(chosen));
  return out;
}

// ---------------------------------------------------------------------------
// acoustic score handling and statistics

/// Mean-shift normalization in cost space: subtract the graph's mean
/// transition cost and clamp at zero.
inline WordGraph normalize_likelihoods(const WordGraph& g) {
  if (g.num_transitions() == 0) return g;
  double sum = 0.0;
  for (const auto& t : g.transitions()) sum += t.cost;
  const double mean = sum / static_cast<double>(g.num_transitions());
  std::vector<Transition> ts = g.transitions();
  for (auto& t : ts) t.cost = std::max(0.0, t.cost - mean);
  return WordGraph(g.start(), g.finals(), std::move(ts));
}

struct GraphStats {
  std::size_t graphs = 0;
  std::size_t transitions = 0;
  std::size_t states = 0;
  std::size_t words = 0;
  double t_per_w = 0.0;
  std::size_t max_t = 0;
  std::size_t max_s = 0;
};

inline GraphStats collect_stats(const std::vector<WordGraph>& graphs,
                                const std::vector<Words>& references) {
  if (graphs.size() != references.size())
    throw ConfigError("graph count " + std::to_string(graphs.size()) +
                      " differs from reference count " + std::to_string(references.size()));
  GraphStats s;
  s.graphs = graphs.size();
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    s.transitions += graphs[i].num_transitions();
    s.states += graphs[i].num_states();
    s.words += references[i].size();
    s.max_t = std::max(s.max_t, graphs[i].num_transitions());
    s.max_s = std::max(s.max_s, graphs[i].num_states());
  }
  if (s.words > 0) s.t_per_w = static_cast<double>(s.transitions) / static_cast<double>(s.words);
  return s;
}

}  // namespace wgp
