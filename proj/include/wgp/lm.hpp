#pragma once

// Witten-Bell backoff Ngram models and lattice decoding under
// acoustic + alpha * LM cost.
//
// For a context h seen in training, with c(h) follower tokens of T(h)
// distinct types:
//   P(w | h) = c(h w) / (c(h) + T(h))            if c(h w) > 0
//            = bow(h) * P(w | h')                 otherwise
// where h' drops the oldest word and bow(h) spreads the reserved mass
// T(h) / (c(h) + T(h)) over the unseen words in proportion to P(. | h').
// Unseen contexts back off with weight 1. The base distribution is uniform
// over the vocabulary, which holds every training word plus </s> and <unk>.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wgp/error.hpp"
#include "wgp/lattice.hpp"

namespace wgp {

inline constexpr std::string_view kSentenceStart = "<s>";
inline constexpr std::string_view kSentenceEnd = "</s>";
inline constexpr std::string_view kUnknownWord = "<unk>";

class NgramModel {
 public:
  using Gram = std::vector<int>;

  NgramModel() = default;

  /// `counts[k]` holds the (k+1)-grams. Word ids index `vocab`, which must
  /// start with <s>, </s>, <unk>.
  NgramModel(int order, std::vector<std::string> vocab, std::vector<std::map<Gram, std::size_t>> counts)
      : order_(order), vocab_(std::move(vocab)), counts_(std::move(counts)) {
    if (order_ != 2 && order_ != 3) throw ConfigError("Ngram order must be 2 or 3");
    if (vocab_.size() < 3 || vocab_[0] != kSentenceStart || vocab_[1] != kSentenceEnd || vocab_[2] != kUnknownWord)
      throw ConfigError("Ngram vocabulary must start with <s> </s> <unk>");
    counts_.resize(static_cast<std::size_t>(order_));
    for (std::size_t i = 0; i < vocab_.size(); ++i) ids_.emplace(vocab_[i], static_cast<int>(i));
    finish();
  }

  int order() const { return order_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::vector<std::map<Gram, std::size_t>>& counts() const { return counts_; }

  /// Words outside the vocabulary map to <unk>.
  int id(std::string_view w) const {
    auto it = ids_.find(std::string(w));
    return it == ids_.end() ? kUnk : it->second;
  }
  const std::string& word(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }

  /// Number of predictable words: the vocabulary minus <s>.
  std::size_t predicted_size() const { return vocab_.size() - 1; }

  /// P(w | history), history oldest first; only the last order-1 ids count.
  double prob(const Gram& history, int w) const {
    if (w == kStart) return 0.0;
    std::size_t keep = std::min(history.size(), static_cast<std::size_t>(order_ - 1));
    return prob_rec(Gram(history.end() - static_cast<std::ptrdiff_t>(keep), history.end()), w);
  }

  double cost(const Gram& history, int w) const { return -std::log(prob(history, w)); }

  /// Backoff weight of a seen context; 1 for unseen contexts.
  double backoff(const Gram& context) const {
    auto it = contexts_.find(context);
    return it == contexts_.end() ? 1.0 : it->second.bow;
  }

  const std::map<Gram, double> backoff_table() const {
    std::map<Gram, double> out;
    for (const auto& [h, s] : contexts_) out.emplace(h, s.bow);
    return out;
  }

  static constexpr int kStart = 0;
  static constexpr int kEnd = 1;
  static constexpr int kUnk = 2;

 private:
  struct ContextStats {
    std::size_t tokens = 0;
    std::size_t types = 0;
    double bow = 1.0;
  };

  double prob_rec(const Gram& h, int w) const {
    if (h.empty()) {
      const ContextStats& s = unigram_;
      auto it = counts_[0].find(Gram{w});
      if (it != counts_[0].end()) return static_cast<double>(it->second) / static_cast<double>(s.tokens + s.types);
      return s.bow / static_cast<double>(predicted_size());
    }
    Gram lower(h.begin() + 1, h.end());
    auto cit = contexts_.find(h);
    if (cit == contexts_.end()) return prob_rec(lower, w);
    Gram g = h;
    g.push_back(w);
    const auto& table = counts_[h.size()];
    auto it = table.find(g);
    if (it != table.end())
      return static_cast<double>(it->second) / static_cast<double>(cit->second.tokens + cit->second.types);
    return cit->second.bow * prob_rec(lower, w);
  }

  void finish() {
    for (std::size_t k = 0; k < counts_.size(); ++k)
      for (const auto& [g, c] : counts_[k]) {
        if (g.size() != k + 1) throw ConfigError("Ngram of wrong length in count table");
        for (int x : g)
          if (x < 0 || static_cast<std::size_t>(x) >= vocab_.size()) throw ConfigError("Ngram word id out of range");
        if (g.back() == kStart) throw ConfigError("<s> cannot be predicted");
        if (c == 0) continue;
        if (k == 0) {
          unigram_.tokens += c;
          unigram_.types += 1;
        } else {
          ContextStats& s = contexts_[Gram(g.begin(), g.end() - 1)];
          s.tokens += c;
          s.types += 1;
        }
      }
    if (unigram_.tokens == 0) throw ConfigError("Ngram model has no unigram counts");
    // unigram level: reserved mass over unseen words of the uniform base
    std::size_t unseen = predicted_size() - unigram_.types;
    double reserved = static_cast<double>(unigram_.types) / static_cast<double>(unigram_.tokens + unigram_.types);
    unigram_.bow = unseen ? reserved * static_cast<double>(predicted_size()) / static_cast<double>(unseen) : 0.0;
    // higher levels in increasing order so lower distributions are final
    for (std::size_t len = 1; len < counts_.size(); ++len) {
      for (auto& [h, s] : contexts_) {
        if (h.size() != len) continue;
        double seen_lower = 0.0;
        auto lo = counts_[len].lower_bound(h);
        for (auto it = lo; it != counts_[len].end() && std::equal(h.begin(), h.end(), it->first.begin()); ++it)
          seen_lower += prob_rec(Gram(h.begin() + 1, h.end()), it->first.back());
        double reserved_h = static_cast<double>(s.types) / static_cast<double>(s.tokens + s.types);
        double rest = 1.0 - seen_lower;
        s.bow = rest > 0.0 ? reserved_h / rest : 0.0;
      }
    }
  }

  int order_ = 2;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::map<Gram, std::size_t>> counts_;
  std::map<Gram, ContextStats> contexts_;
  ContextStats unigram_;
};

/// Counts every k-gram (k <= order) of "<s> w1 .. wn </s>", never
/// predicting <s>.
inline NgramModel train_ngram(const std::vector<Words>& corpus, int order) {
  if (order != 2 && order != 3) throw ConfigError("Ngram order must be 2 or 3, got " + std::to_string(order));
  if (corpus.empty()) throw ConfigError("cannot train an Ngram model on an empty corpus");
  std::vector<std::string> vocab{std::string(kSentenceStart), std::string(kSentenceEnd), std::string(kUnknownWord)};
  std::map<std::string, int> ids;
  for (int i = 0; i < 3; ++i) ids.emplace(vocab[static_cast<std::size_t>(i)], i);
  std::vector<std::map<NgramModel::Gram, std::size_t>> counts(static_cast<std::size_t>(order));
  for (const auto& sentence : corpus) {
    NgramModel::Gram s{NgramModel::kStart};
    for (const auto& w : sentence) {
      auto [it, inserted] = ids.emplace(w, static_cast<int>(vocab.size()));
      if (inserted) vocab.push_back(w);
      s.push_back(it->second);
    }
    s.push_back(NgramModel::kEnd);
    for (std::size_t i = 1; i < s.size(); ++i)
      for (std::size_t k = 1; k <= static_cast<std::size_t>(order) && k <= i + 1; ++k)
        counts[k - 1][NgramModel::Gram(s.begin() + static_cast<std::ptrdiff_t>(i + 1 - k),
                                       s.begin() + static_cast<std::ptrdiff_t>(i + 1))] += 1;
  }
  return NgramModel(order, std::move(vocab), std::move(counts));
}

/// Negative natural-log probability of "<s> words </s>".
inline double score_sequence(const NgramModel& m, const Words& words) {
  NgramModel::Gram h{NgramModel::kStart};
  double total = 0.0;
  for (const auto& w : words) {
    int id = m.id(w);
    total += m.cost(h, id);
    h.push_back(id);
  }
  return total + m.cost(h, NgramModel::kEnd);
}

// ---------------------------------------------------------------------------
// model file

inline std::string write_ngram_model(const NgramModel& m) {
  std::string out = "wgp-ngram 1\norder " + std::to_string(m.order()) + "\n";
  out += "vocab " + std::to_string(m.vocab().size()) + "\n";
  for (const auto& w : m.vocab()) out += w + "\n";
  auto gram_text = [&](const NgramModel::Gram& g) {
    std::string s;
    for (std::size_t i = 0; i < g.size(); ++i) s += (i ? " " : "") + m.word(g[i]);
    return s;
  };
  for (std::size_t k = 0; k < m.counts().size(); ++k) {
    out += "ngrams " + std::to_string(k + 1) + " " + std::to_string(m.counts()[k].size()) + "\n";
    for (const auto& [g, c] : m.counts()[k]) out += std::to_string(c) + "\t" + gram_text(g) + "\n";
  }
  auto bows = m.backoff_table();
  out += "backoff " + std::to_string(bows.size()) + "\n";
  for (const auto& [h, b] : bows) out += detail::format_double(b) + "\t" + gram_text(h) + "\n";
  return out;
}

/// Backoff weights in the file are checked against the ones implied by the
/// counts.
inline NgramModel read_ngram_model(std::string_view text) {
  auto lines = detail::numbered_lines(text);
  std::size_t at = 0;
  auto next = [&]() -> std::pair<std::size_t, std::string_view> {
    while (at < lines.size()) {
      auto [no, raw] = lines[at++];
      auto body = detail::strip_comment(raw);
      if (!detail::split_ws(body).empty()) return {no, raw};
    }
    throw ParseError("unexpected end of Ngram model file", lines.empty() ? 0 : lines.back().first);
  };
  auto expect = [&](std::string_view key) {
    auto [no, raw] = next();
    auto toks = detail::split_ws(raw);
    if (toks.empty() || toks[0] != key) throw ParseError("expected '" + std::string(key) + "'", no);
    return std::make_pair(no, toks);
  };
  {
    auto [no, toks] = expect("wgp-ngram");
    if (toks.size() != 2 || toks[1] != "1") throw ParseError("unsupported Ngram model version", no);
  }
  auto [ono, otoks] = expect("order");
  if (otoks.size() != 2) throw ParseError("expected 'order <n>'", ono);
  int order = detail::parse_int<int>(otoks[1], ono, "order");
  auto [vno, vtoks] = expect("vocab");
  if (vtoks.size() != 2) throw ParseError("expected 'vocab <n>'", vno);
  auto nv = detail::parse_int<std::size_t>(vtoks[1], vno, "vocabulary size");
  std::vector<std::string> vocab;
  std::unordered_map<std::string, int> ids;
  for (std::size_t i = 0; i < nv; ++i) {
    auto [no, raw] = next();
    auto toks = detail::split_ws(raw);
    if (toks.size() != 1) throw ParseError("vocabulary lines hold one word", no);
    if (!ids.emplace(std::string(toks[0]), static_cast<int>(vocab.size())).second)
      throw ParseError("duplicate vocabulary word '" + std::string(toks[0]) + "'", no);
    vocab.emplace_back(toks[0]);
  }
  auto read_gram = [&](const std::vector<std::string_view>& toks, std::size_t from, std::size_t no) {
    NgramModel::Gram g;
    for (std::size_t i = from; i < toks.size(); ++i) {
      auto it = ids.find(std::string(toks[i]));
      if (it == ids.end()) throw ParseError("word '" + std::string(toks[i]) + "' not in vocabulary", no);
      g.push_back(it->second);
    }
    return g;
  };
  if (order != 2 && order != 3) throw ParseError("Ngram order must be 2 or 3", ono);
  std::vector<std::map<NgramModel::Gram, std::size_t>> counts(static_cast<std::size_t>(order));
  for (int k = 1; k <= order; ++k) {
    auto [no, toks] = expect("ngrams");
    if (toks.size() != 3 || detail::parse_int<int>(toks[1], no, "Ngram length") != k)
      throw ParseError("expected 'ngrams " + std::to_string(k) + " <n>'", no);
    auto n = detail::parse_int<std::size_t>(toks[2], no, "Ngram count");
    for (std::size_t i = 0; i < n; ++i) {
      auto [lno, raw] = next();
      auto gt = detail::split_ws(raw);
      if (gt.size() != static_cast<std::size_t>(k) + 1)
        throw ParseError("expected a count and " + std::to_string(k) + " words", lno);
      counts[static_cast<std::size_t>(k - 1)][read_gram(gt, 1, lno)] = detail::parse_int<std::size_t>(gt[0], lno, "count");
    }
  }
  NgramModel m;
  try {
    m = NgramModel(order, vocab, counts);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), ono);
  }
  auto [bno, btoks] = expect("backoff");
  if (btoks.size() != 2) throw ParseError("expected 'backoff <n>'", bno);
  auto nb = detail::parse_int<std::size_t>(btoks[1], bno, "backoff count");
  for (std::size_t i = 0; i < nb; ++i) {
    auto [lno, raw] = next();
    auto bt = detail::split_ws(raw);
    if (bt.size() < 2) throw ParseError("expected a weight and a context", lno);
    double w = detail::parse_double(bt[0], lno, "backoff weight");
    double implied = m.backoff(read_gram(bt, 1, lno));
    if (std::abs(w - implied) > 1e-9 * std::max(1.0, std::abs(implied)))
      throw ParseError("backoff weight disagrees with the counts", lno);
  }
  return m;
}

// ---------------------------------------------------------------------------
// lattice decoding

namespace detail {

/// Word graph expanded with LM history; nodes are (state, history) pairs
/// reached from (start, <s>). Stopping at a final state pays the </s> cost.
class LmLattice {
 public:
  static constexpr std::size_t kStop = static_cast<std::size_t>(-1);

  struct Node {
    std::size_t state = 0;
    NgramModel::Gram history;
    double stop_cost = std::numeric_limits<double>::infinity();
    std::vector<std::pair<std::size_t, std::size_t>> arcs;  // (transition, node)
    std::vector<double> arc_cost;
    // best completion
    bool valid = false;
    double best = std::numeric_limits<double>::infinity();
    std::size_t next = kStop;
    std::size_t ntrans = 0;
  };

  LmLattice(const WordGraph& g, const NgramModel& m, double alpha) : g_(g) {
    if (g.has_epsilons()) throw GraphError("LM decoding requires an epsilon-free word graph");
    const auto& ts = g.transitions();
    std::map<std::pair<std::size_t, NgramModel::Gram>, std::size_t> index;
    auto intern = [&](std::size_t state, NgramModel::Gram h) {
      auto [it, inserted] = index.emplace(std::make_pair(state, h), nodes_.size());
      if (inserted) {
        Node nd;
        nd.state = state;
        nd.history = std::move(h);
        nodes_.push_back(std::move(nd));
      }
      return it->second;
    };
    std::size_t keep = static_cast<std::size_t>(m.order() - 1);
    intern(g.index_of(g.start()), {NgramModel::kStart});
    // states are topologically ordered, so processing nodes by state works
    std::vector<std::vector<std::size_t>> by_state(g.num_states());
    by_state[nodes_[0].state].push_back(0);
    for (std::size_t s = 0; s < g.num_states(); ++s) {
      for (std::size_t k = 0; k < by_state[s].size(); ++k) {
        std::size_t x = by_state[s][k];
        NgramModel::Gram h = nodes_[x].history;
        if (g.is_final(g.states()[s])) nodes_[x].stop_cost = alpha * m.cost(h, NgramModel::kEnd);
        for (std::size_t t : g.outgoing(s)) {
          int w = m.id(ts[t].label);
          double c = ts[t].cost + (alpha == 0.0 ? 0.0 : alpha * m.cost(h, w));
          NgramModel::Gram nh = h;
          nh.push_back(w);
          if (nh.size() > keep) nh.erase(nh.begin());
          std::size_t to = g.index_of(ts[t].to);
          std::size_t before = nodes_.size();
          std::size_t y = intern(to, std::move(nh));
          if (y == before) by_state[to].push_back(y);
          nodes_[x].arcs.push_back({t, y});
          nodes_[x].arc_cost.push_back(c);
        }
      }
    }
    order_ = std::move(by_state);
    solve();
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  const WordGraph& graph() const { return g_; }

  /// Words of the best completion of node x.
  void completion_words(std::size_t x, std::vector<const std::string*>& out) const {
    while (nodes_[x].next != kStop) {
      const auto& [t, y] = nodes_[x].arcs[nodes_[x].next];
      out.push_back(&g_.transitions()[t].label);
      x = y;
    }
  }

  LatticePath best_path() const {
    std::vector<std::size_t> chosen;
    for (std::size_t x = 0; nodes_[x].next != kStop;) {
      chosen.push_back(nodes_[x].arcs[nodes_[x].next].first);
      x = nodes_[x].arcs[nodes_[x].next].second;
    }
    return make_path(g_, std::move(chosen));
  }

  double best_cost() const { return nodes_[0].best; }

 private:
  static int compare_words(std::vector<const std::string*> a, std::vector<const std::string*> b) {
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i)
      if (int c = a[i]->compare(*b[i]); c != 0) return c;
    return a.size() < b.size() ? -1 : a.size() > b.size() ? 1 : 0;
  }

  void solve() {
    for (std::size_t s = order_.size(); s-- > 0;) {
      for (std::size_t x : order_[s]) {
        Node& nd = nodes_[x];
        if (std::isfinite(nd.stop_cost)) {
          nd.valid = true;
          nd.best = nd.stop_cost;
          nd.next = kStop;
          nd.ntrans = 0;
        }
        for (std::size_t a = 0; a < nd.arcs.size(); ++a) {
          const Node& to = nodes_[nd.arcs[a].second];
          if (!to.valid) continue;
          double c = nd.arc_cost[a] + to.best;
          bool take = !nd.valid || c < nd.best;
          if (nd.valid && c == nd.best) {
            std::vector<const std::string*> cand{&g_.transitions()[nd.arcs[a].first].label}, cur;
            completion_words(nd.arcs[a].second, cand);
            completion_words(x, cur);
            int cmp = compare_words(cand, cur);
            take = cmp < 0 || (cmp == 0 && to.ntrans + 1 < nd.ntrans);
          }
          if (take) {
            nd.valid = true;
            nd.best = c;
            nd.next = a;
            nd.ntrans = to.ntrans + 1;
          }
        }
      }
    }
    if (!nodes_[0].valid) throw GraphError("word graph has no accepting path");
  }

  const WordGraph& g_;
  std::vector<Node> nodes_;
  std::vector<std::vector<std::size_t>> order_;
};

}  // namespace detail

/// Path minimizing acoustic_total + alpha * LM cost, with the lattice
/// tie-break on equal cost.
inline LatticePath decode(const WordGraph& g, const NgramModel& m, double alpha = 1.0) {
  if (alpha < 0.0) throw ConfigError("LM scale must be non-negative");
  return detail::LmLattice(g, m, alpha).best_path();
}

struct ScoredPath {
  LatticePath path;
  double cost = 0.0;  // acoustic_total + alpha * LM cost
};

/// The `n` best paths under decode's cost, best first. A* search over the
/// expanded lattice with the exact completion cost as heuristic; partial
/// paths are ranked by their best completion, so complete paths come out in
/// (cost, words, transitions) order.
inline std::vector<ScoredPath> nbest_paths(const WordGraph& g, const NgramModel& m, std::size_t n,
                                           double alpha = 1.0) {
  std::vector<ScoredPath> out;
  if (n == 0) return out;
  detail::LmLattice lat(g, m, alpha);
  const auto& nodes = lat.nodes();
  struct Partial {
    std::size_t node;
    double g;
    std::ptrdiff_t parent;     // index into `store`
    std::size_t transition;    // arc taken from the parent
    bool stopped;
    std::size_t depth;
  };
  std::vector<Partial> store;
  struct Key {
    double f;
    std::vector<const std::string*> words;
    std::size_t ntrans;
    std::size_t id;
  };
  auto key_less = [](const Key& a, const Key& b) {
    if (a.f != b.f) return a.f < b.f;
    for (std::size_t i = 0; i < a.words.size() && i < b.words.size(); ++i)
      if (int c = a.words[i]->compare(*b.words[i]); c != 0) return c < 0;
    if (a.words.size() != b.words.size()) return a.words.size() < b.words.size();
    if (a.ntrans != b.ntrans) return a.ntrans < b.ntrans;
    return a.id < b.id;
  };
  auto cmp = [&](const Key& a, const Key& b) { return key_less(b, a); };
  std::priority_queue<Key, std::vector<Key>, decltype(cmp)> queue(cmp);
  auto prefix_words = [&](std::size_t id) {
    std::vector<const std::string*> w;
    for (std::ptrdiff_t p = static_cast<std::ptrdiff_t>(id); store[static_cast<std::size_t>(p)].parent >= 0;
         p = store[static_cast<std::size_t>(p)].parent)
      w.push_back(&g.transitions()[store[static_cast<std::size_t>(p)].transition].label);
    std::reverse(w.begin(), w.end());
    return w;
  };
  auto push = [&](Partial p) {
    std::size_t id = store.size();
    store.push_back(p);
    Key k{p.g, prefix_words(id), p.depth, id};
    if (!p.stopped) {
      k.f += nodes[p.node].best;
      lat.completion_words(p.node, k.words);
      k.ntrans += nodes[p.node].ntrans;
    }
    queue.push(std::move(k));
  };
  push({0, 0.0, -1, 0, false, 0});
  while (!queue.empty() && out.size() < n) {
    Key k = queue.top();
    queue.pop();
    Partial p = store[k.id];
    const auto& nd = nodes[p.node];
    if (p.stopped) {
      std::vector<std::size_t> ts;
      for (std::ptrdiff_t q = static_cast<std::ptrdiff_t>(k.id); store[static_cast<std::size_t>(q)].parent >= 0;
           q = store[static_cast<std::size_t>(q)].parent)
        ts.push_back(store[static_cast<std::size_t>(q)].transition);
      std::reverse(ts.begin(), ts.end());
      out.push_back({make_path(g, std::move(ts)), p.g});
      continue;
    }
    auto self = static_cast<std::ptrdiff_t>(k.id);
    if (std::isfinite(nd.stop_cost)) {
      // a stopped copy shares the parent chain of the path it ends
      Partial s = p;
      s.g += nd.stop_cost;
      s.stopped = true;
      push(s);
    }
    for (std::size_t a = 0; a < nd.arcs.size(); ++a) {
      if (!nodes[nd.arcs[a].second].valid) continue;
      push({nd.arcs[a].second, p.g + nd.arc_cost[a], self, nd.arcs[a].first, false, p.depth + 1});
    }
  }
  return out;
}

/// Subgraph of the transitions lying on at least one of the `n` best paths.
inline WordGraph nbest_prune(const WordGraph& g, const NgramModel& m, std::size_t n, double alpha = 1.0) {
  if (n == 0) throw ConfigError("N-best pruning needs N >= 1");
  std::vector<bool> keep(g.num_transitions(), false);
  std::set<StateId> finals;
  for (const auto& sp : nbest_paths(g, m, n, alpha)) {
    for (std::size_t t : sp.path.transitions) keep[t] = true;
    finals.insert(sp.path.transitions.empty() ? g.start() : g.transitions()[sp.path.transitions.back()].to);
  }
  std::vector<Transition> kept;
  for (std::size_t t = 0; t < keep.size(); ++t)
    if (keep[t]) kept.push_back(g.transitions()[t]);
  return WordGraph(g.start(), finals, kept);
}

}  // namespace wgp
