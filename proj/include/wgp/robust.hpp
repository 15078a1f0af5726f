#pragma once

// Robust word-graph analysis. Category edges found by the chart parser are
// added over (state, state) spans; the best mixed path of edges and plain
// transitions ("skips") is then found by a shortest-path search over the
// graph expanded with LM history. The method pipelines of the evaluation
// tables are assembled here as well.

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "wgp/dop.hpp"
#include "wgp/error.hpp"
#include "wgp/lattice.hpp"
#include "wgp/lm.hpp"
#include "wgp/update.hpp"

namespace wgp {

struct CategoryEdge {
  StateId from = 0;
  StateId to = 0;
  std::string category;
  UpdateExpr update;
  Derivation derivation;
  double inner = 0.0;     // log probability of the derivation
  double acoustic = 0.0;  // acoustic total of the covered transitions
  std::vector<std::size_t> transitions;
  Words words;
};

/// Best derivation per (span, category in `roots`) over every state pair.
/// Without a rewrite table edges carry the empty update; with one, edges
/// whose semantics cannot be computed are left out.
inline std::vector<CategoryEdge> detect_categories(const SubtreeGrammar& g, const WordGraph& wg,
                                                   const std::set<std::string>& roots,
                                                   const RewriteTable* rules = nullptr, double lambda = 0.5,
                                                   std::size_t* work_bytes = nullptr) {
  std::vector<CategoryEdge> out;
  if (wg.has_epsilons()) throw GraphError("category detection requires an epsilon-free word graph");
  detail::Chart chart(g, wg, lambda);
  if (work_bytes) *work_bytes = chart.work_bytes();
  const auto& cats = g.compiled().symbol_category;
  for (std::size_t i = 0; i < wg.num_states(); ++i)
    for (std::size_t j = i + 1; j < wg.num_states(); ++j)
      for (const auto& cat : roots) {
        auto ref = chart.best_symbol(i, j, [&](int sym) { return cats[static_cast<std::size_t>(sym)] == cat; });
        if (!ref) continue;
        IDerivation d = chart.extract(*ref);
        CategoryEdge e;
        e.from = wg.states()[i];
        e.to = wg.states()[j];
        e.category = cat;
        e.inner = d.derivation.log_probability;
        e.acoustic = d.path.acoustic_total;
        e.transitions = d.path.transitions;
        e.words = d.path.words;
        if (rules) {
          try {
            e.update = derive_update(d.derivation, *rules);
          } catch (const SemanticError&) {
            continue;
          }
        }
        e.derivation = std::move(d.derivation);
        out.push_back(std::move(e));
      }
  return out;
}

struct WeightConfig {
  double w_acoustic = 1.0;
  double w_skip = 1.0;
  double w_proj = 1.0;
  double w_ngram = 1.0;

  void validate() const {
    for (double w : {w_acoustic, w_skip, w_proj, w_ngram})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("weights must be finite and non-negative");
    if (w_acoustic == 0.0 && w_skip == 0.0 && w_proj == 0.0 && w_ngram == 0.0)
      throw ConfigError("at least one weight must be positive");
  }
};

struct SkipStep {
  bool edge = false;
  std::size_t index = 0;  // edge index, or transition index for a skip
  friend bool operator==(const SkipStep&, const SkipStep&) = default;
};

struct SkipPath {
  std::vector<SkipStep> steps;
  double weight = 0.0;
  std::size_t skips = 0;
  std::size_t projections = 0;
  double acoustic = 0.0;
  double lm_cost = 0.0;
  Words words;
};

/// Weight of an explicit step sequence; the LM sees the words of all steps
/// followed by </s>.
inline SkipPath score_steps(const WordGraph& wg, const std::vector<CategoryEdge>& edges,
                            std::vector<SkipStep> steps, const WeightConfig& w, const NgramModel& m) {
  SkipPath p;
  StateId at = wg.start();
  for (const auto& s : steps) {
    if (s.edge) {
      const CategoryEdge& e = edges.at(s.index);
      if (e.from != at) throw GraphError("step sequence is not contiguous");
      at = e.to;
      p.acoustic += e.acoustic;
      p.words.insert(p.words.end(), e.words.begin(), e.words.end());
      ++p.projections;
    } else {
      const Transition& t = wg.transitions().at(s.index);
      if (t.from != at) throw GraphError("step sequence is not contiguous");
      at = t.to;
      p.acoustic += t.cost;
      if (!t.is_epsilon()) p.words.push_back(t.label);
      ++p.skips;
    }
  }
  if (!wg.is_final(at)) throw GraphError("step sequence does not end in a final state");
  p.lm_cost = score_sequence(m, p.words);
  p.weight = w.w_acoustic * p.acoustic + w.w_skip * static_cast<double>(p.skips) +
             w.w_proj * static_cast<double>(p.projections) + w.w_ngram * p.lm_cost;
  p.steps = std::move(steps);
  return p;
}

/// Total order on candidate step sequences: weight, skips, words, steps.
inline bool skip_path_less(const SkipPath& a, const SkipPath& b) {
  if (a.weight != b.weight) return a.weight < b.weight;
  if (a.skips != b.skips) return a.skips < b.skips;
  if (a.words != b.words) return a.words < b.words;
  return a.steps.size() < b.steps.size();
}

/// Minimum-weight contiguous start-to-final sequence of edges and skips.
inline SkipPath best_skip_path(const WordGraph& wg, const std::vector<CategoryEdge>& edges,
                               const WeightConfig& w, const NgramModel& m) {
  w.validate();
  using Gram = NgramModel::Gram;
  const std::size_t n = wg.num_states();
  const std::size_t keep = static_cast<std::size_t>(m.order() - 1);

  struct Arc {
    SkipStep step;
    std::size_t to;  // state index
    std::vector<int> ids;
    const Words* words;
    double base;     // weight contribution before LM
    std::size_t skips;
  };
  std::vector<std::vector<Arc>> arcs(n);
  std::vector<Words> single(wg.num_transitions());
  for (std::size_t t = 0; t < wg.num_transitions(); ++t) {
    const Transition& tr = wg.transitions()[t];
    Arc a{{false, t}, wg.index_of(tr.to), {}, &single[t], w.w_acoustic * tr.cost + w.w_skip, 1};
    if (!tr.is_epsilon()) {
      single[t].push_back(tr.label);
      a.ids.push_back(m.id(tr.label));
    }
    arcs[wg.index_of(tr.from)].push_back(std::move(a));
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const CategoryEdge& ce = edges[e];
    Arc a{{true, e}, wg.index_of(ce.to), {}, &ce.words, w.w_acoustic * ce.acoustic + w.w_proj, 0};
    for (const auto& word : ce.words) a.ids.push_back(m.id(word));
    arcs[wg.index_of(ce.from)].push_back(std::move(a));
  }

  struct Node {
    std::size_t state = 0;
    Gram history;
    std::vector<std::pair<std::size_t, std::size_t>> out;  // (arc index, node)
    std::vector<double> weight;
    bool valid = false;
    double best = 0.0;
    std::size_t skips = 0;
    std::size_t steps = 0;
    std::optional<std::size_t> next;  // index into out
    double stop = std::numeric_limits<double>::infinity();
  };
  std::vector<Node> nodes;
  std::map<std::pair<std::size_t, Gram>, std::size_t> index;
  std::vector<std::vector<std::size_t>> by_state(n);
  auto intern = [&](std::size_t s, Gram h) {
    auto [it, inserted] = index.emplace(std::make_pair(s, h), nodes.size());
    if (inserted) {
      Node nd;
      nd.state = s;
      nd.history = std::move(h);
      nodes.push_back(std::move(nd));
      by_state[s].push_back(it->second);
    }
    return it->second;
  };
  intern(wg.index_of(wg.start()), {NgramModel::kStart});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < by_state[s].size(); ++k) {
      std::size_t x = by_state[s][k];
      if (wg.is_final(wg.states()[s])) nodes[x].stop = w.w_ngram * m.cost(nodes[x].history, NgramModel::kEnd);
      for (std::size_t a = 0; a < arcs[s].size(); ++a) {
        const Arc& arc = arcs[s][a];
        Gram h = nodes[x].history;
        double lm = 0.0;
        for (int id : arc.ids) {
          if (w.w_ngram != 0.0) lm += m.cost(h, id);
          h.push_back(id);
          if (h.size() > keep) h.erase(h.begin());
        }
        double weight = arc.base + w.w_ngram * lm;
        std::size_t y = intern(arc.to, std::move(h));
        nodes[x].out.push_back({a, y});
        nodes[x].weight.push_back(weight);
      }
    }

  auto suffix_words = [&](std::size_t x, Words& out) {
    while (nodes[x].next) {
      auto [a, y] = nodes[x].out[*nodes[x].next];
      const Words& ws = *arcs[nodes[x].state][a].words;
      out.insert(out.end(), ws.begin(), ws.end());
      x = y;
    }
  };
  for (std::size_t s = n; s-- > 0;)
    for (std::size_t x : by_state[s]) {
      Node& nd = nodes[x];
      if (std::isfinite(nd.stop)) {
        nd.valid = true;
        nd.best = nd.stop;
      }
      for (std::size_t o = 0; o < nd.out.size(); ++o) {
        const auto [a, y] = nd.out[o];
        const Node& to = nodes[y];
        if (!to.valid) continue;
        const Arc& arc = arcs[s][a];
        double c = nd.weight[o] + to.best;
        std::size_t sk = to.skips + arc.skips;
        bool take = !nd.valid || c < nd.best || (c == nd.best && sk < nd.skips);
        if (nd.valid && c == nd.best && sk == nd.skips) {
          Words cand = *arc.words, cur;
          suffix_words(y, cand);
          suffix_words(x, cur);
          take = cand < cur || (cand == cur && to.steps + 1 < nd.steps);
        }
        if (take) {
          nd.valid = true;
          nd.best = c;
          nd.skips = sk;
          nd.steps = to.steps + 1;
          nd.next = o;
        }
      }
    }
  if (!nodes[0].valid) throw GraphError("word graph has no accepting path");

  std::vector<SkipStep> steps;
  for (std::size_t x = 0; nodes[x].next;) {
    auto [a, y] = nodes[x].out[*nodes[x].next];
    steps.push_back(arcs[nodes[x].state][a].step);
    x = y;
  }
  return score_steps(wg, edges, std::move(steps), w, m);
}

/// Updates of the path's edges joined with ';' in path order.
inline UpdateExpr path_update(const SkipPath& p, const std::vector<CategoryEdge>& edges) {
  UpdateExpr u;
  for (const auto& s : p.steps)
    if (s.edge) u = conjoin(u, edges[s.index].update);
  return u;
}

// ---------------------------------------------------------------------------
// methods

struct MethodSpec {
  enum class Kind { Speech, Possible, SpeechBigram, SpeechTrigram, Best, Full, Dop };
  Kind kind = Kind::Speech;
  bool trigram = false;  // model B of b(B,N) / f(B,N)
  std::size_t n = 0;     // N, or the depth of dN
  std::string text;
};

inline MethodSpec parse_method(const std::string& text) {
  static const std::regex bf(R"(([bf])\((bi|tr),\s*([0-9]+)\))");
  static const std::regex dop(R"(d([0-9]+))");
  MethodSpec s;
  s.text = text;
  std::smatch m;
  if (text == "speech") {
    s.kind = MethodSpec::Kind::Speech;
  } else if (text == "possible") {
    s.kind = MethodSpec::Kind::Possible;
  } else if (text == "speech_bigram") {
    s.kind = MethodSpec::Kind::SpeechBigram;
  } else if (text == "speech_trigram") {
    s.kind = MethodSpec::Kind::SpeechTrigram;
  } else if (std::regex_match(text, m, bf)) {
    s.kind = m[1] == "b" ? MethodSpec::Kind::Best : MethodSpec::Kind::Full;
    s.trigram = m[2] == "tr";
    s.n = std::stoul(m[3]);
    if (s.n == 0) throw ConfigError("method '" + text + "' needs N >= 1");
  } else if (std::regex_match(text, m, dop)) {
    s.kind = MethodSpec::Kind::Dop;
    s.n = std::stoul(m[1]);
    if (s.n == 0) throw ConfigError("method '" + text + "' needs a depth >= 1");
  } else {
    throw ConfigError("unknown method descriptor '" + text + "'");
  }
  return s;
}

/// Everything a method may need. Pointers left null make the methods that
/// need them fail with ConfigError.
struct MethodContext {
  const SubtreeGrammar* grammar = nullptr;
  const NgramModel* bigram = nullptr;
  const NgramModel* trigram = nullptr;
  const RewriteTable* rules = nullptr;
  std::set<std::string> categories;  // roots for category edges; empty: every category
  WeightConfig weights;
  double lambda = 0.5;
  double alpha = 1.0;
  bool record_timing = true;
};

struct MethodResult {
  Words words;
  UpdateExpr update;
  bool parsed = false;  // the NLP stage produced an analysis
  double elapsed_ms = 0.0;
  std::size_t work_bytes = 0;
};

namespace detail {

inline const NgramModel& need(const NgramModel* m, const char* what) {
  if (!m) throw ConfigError(std::string("method needs a ") + what + " model");
  return *m;
}

inline const SubtreeGrammar& need(const SubtreeGrammar* g) {
  if (!g) throw ConfigError("method needs a subtree grammar");
  return *g;
}

inline std::set<std::string> edge_roots(const MethodContext& ctx) {
  if (!ctx.categories.empty()) return ctx.categories;
  std::set<std::string> all;
  for (const auto& r : need(ctx.grammar).rules()) all.insert(r.fragment.label);
  return all;
}

inline MethodResult robust_parse(const WordGraph& wg, const MethodContext& ctx) {
  MethodResult r;
  std::size_t bytes = 0;
  auto edges = detect_categories(need(ctx.grammar), wg, edge_roots(ctx), ctx.rules, ctx.lambda, &bytes);
  SkipPath p = best_skip_path(wg, edges, ctx.weights, need(ctx.trigram, "trigram"));
  r.words = p.words;
  r.update = path_update(p, edges);
  r.parsed = p.projections > 0;
  r.work_bytes = bytes;
  return r;
}

inline MethodResult pruned_parse(const WordGraph& wg, const MethodContext& ctx, bool trigram, std::size_t n) {
  const NgramModel& b = trigram ? need(ctx.trigram, "trigram") : need(ctx.bigram, "bigram");
  WordGraph pruned = nbest_prune(wg, b, n, ctx.alpha);
  return robust_parse(pruned, ctx);
}

}  // namespace detail

/// Runs one method on one graph. `reference` is used by `possible` only.
inline MethodResult run_method(const MethodSpec& spec, const WordGraph& input, const MethodContext& ctx,
                               const Words& reference = {}) {
  auto started = std::chrono::steady_clock::now();
  WordGraph wg = input.has_epsilons() ? normalize_epsilons(input) : input;
  MethodResult r;
  switch (spec.kind) {
    case MethodSpec::Kind::Speech:
      r.words = best_path_acoustic(wg).words;
      break;
    case MethodSpec::Kind::Possible:
      r.words = oracle_path(wg, reference).path.words;
      break;
    case MethodSpec::Kind::SpeechBigram:
      r.words = decode(wg, detail::need(ctx.bigram, "bigram"), ctx.alpha).words;
      break;
    case MethodSpec::Kind::SpeechTrigram:
      r.words = decode(wg, detail::need(ctx.trigram, "trigram"), ctx.alpha).words;
      break;
    case MethodSpec::Kind::Best:
      r = detail::pruned_parse(wg, ctx, spec.trigram, spec.n);
      break;
    case MethodSpec::Kind::Full:
      if (wg.num_transitions() < spec.n)
        r = detail::robust_parse(wg, ctx);
      else
        r = detail::pruned_parse(wg, ctx, spec.trigram, 1);
      break;
    case MethodSpec::Kind::Dop: {
      const SubtreeGrammar& full = detail::need(ctx.grammar);
      std::optional<SubtreeGrammar> reduced;
      if (static_cast<int>(spec.n) < full.max_depth()) reduced = full.restricted_to_depth(static_cast<int>(spec.n));
      const SubtreeGrammar& g = reduced ? *reduced : full;
      WordgraphParse p = mpd_wordgraph(g, normalize_likelihoods(wg), ctx.lambda);
      r.work_bytes = p.work_bytes;
      if (p.best) {
        r.parsed = true;
        r.words = p.best->path.words;
        if (ctx.rules) {
          try {
            r.update = derive_update(p.best->derivation, *ctx.rules);
          } catch (const SemanticError&) {
            r.update = {};
          }
        }
      } else {
        r.words = p.fallback.words;
      }
      break;
    }
  }
  if (ctx.record_timing)
    r.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return r;
}

inline MethodResult run_method(const std::string& descriptor, const WordGraph& wg, const MethodContext& ctx,
                               const Words& reference = {}) {
  return run_method(parse_method(descriptor), wg, ctx, reference);
}

}  // namespace wgp
