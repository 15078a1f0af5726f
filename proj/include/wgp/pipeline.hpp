#pragma once

// Batch driver: a JSON run configuration, fixture loading and the report
// commands behind the command-line tool.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "wgp/dop.hpp"
#include "wgp/error.hpp"
#include "wgp/eval.hpp"
#include "wgp/lattice.hpp"
#include "wgp/lm.hpp"
#include "wgp/robust.hpp"
#include "wgp/treebank.hpp"
#include "wgp/update.hpp"

namespace wgp {

namespace fs = std::filesystem;

/// Failure while reading an input file; the message names the file.
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  fs::path treebank, rules, corpus, graphs, references, annotations;
  fs::path bigram_model, trigram_model;  // optional; trained from corpus when empty
  fs::path output = "out";
  std::string start = "S";
  bool semantic = false;
  bool exception_types = true;
  std::vector<std::string> methods;
  std::vector<std::string> baselines{"speech", "possible", "speech_bigram", "speech_trigram"};
  std::set<std::string> categories;
  double lambda = 0.5;
  double alpha = 1.0;
  WeightConfig weights;
  SubtreeConstraints constraints;
  std::vector<double> cutoffs = default_cutoffs();
  std::vector<std::size_t> length_bins{2, 4, 6, 8, 10};
  bool record_timing = true;
  SlotAliases aliases;
};

namespace detail {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void take_path(const nlohmann::json& j, const char* key, const fs::path& base, fs::path& out) {
  std::string s;
  take(j, key, s);
  if (s.empty()) return;
  fs::path p(s);
  out = p.is_absolute() ? p : base / p;
}

}  // namespace detail

/// Relative paths resolve against `base`.
inline RunConfig parse_config(const nlohmann::json& j, const fs::path& base = ".") {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{
      "treebank", "rules", "corpus", "graphs", "references", "annotations", "bigram_model",
      "trigram_model", "output", "start", "semantic", "exception_types", "methods", "baselines",
      "categories", "lambda", "alpha", "weights", "constraints", "cutoffs_ms", "length_bins",
      "record_timing", "slot_aliases"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  RunConfig c;
  using detail::take;
  using detail::take_path;
  take_path(j, "treebank", base, c.treebank);
  take_path(j, "rules", base, c.rules);
  take_path(j, "corpus", base, c.corpus);
  take_path(j, "graphs", base, c.graphs);
  take_path(j, "references", base, c.references);
  take_path(j, "annotations", base, c.annotations);
  take_path(j, "bigram_model", base, c.bigram_model);
  take_path(j, "trigram_model", base, c.trigram_model);
  take_path(j, "output", base, c.output);
  take(j, "start", c.start);
  take(j, "semantic", c.semantic);
  take(j, "exception_types", c.exception_types);
  take(j, "methods", c.methods);
  take(j, "baselines", c.baselines);
  take(j, "categories", c.categories);
  take(j, "lambda", c.lambda);
  take(j, "alpha", c.alpha);
  take(j, "cutoffs_ms", c.cutoffs);
  take(j, "length_bins", c.length_bins);
  take(j, "record_timing", c.record_timing);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    take(w, "acoustic", c.weights.w_acoustic);
    take(w, "skip", c.weights.w_skip);
    take(w, "projection", c.weights.w_proj);
    take(w, "ngram", c.weights.w_ngram);
  }
  if (j.contains("constraints")) {
    const auto& k = j.at("constraints");
    take(k, "d", c.constraints.d);
    take(k, "l", c.constraints.l);
    take(k, "L", c.constraints.L);
    take(k, "n", c.constraints.n);
    take(k, "large_graph_threshold", c.constraints.large_graph_threshold);
    take(k, "large_graph_d", c.constraints.large_graph_d);
  }
  if (j.contains("slot_aliases")) {
    const auto& a = j.at("slot_aliases");
    take(a, "dropped", c.aliases.dropped);
    take(a, "aliases", c.aliases.aliases);
    take(a, "joiner", c.aliases.joiner);
    take(a, "empty_slot", c.aliases.empty_slot);
  }
  c.constraints.validate();
  c.weights.validate();
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(c.alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  for (const auto& m : c.methods) parse_method(m);
  for (const auto& m : c.baselines) parse_method(m);
  return c;
}

inline RunConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  fs::path base = file.parent_path();
  return parse_config(j, base.empty() ? fs::path(".") : base);
}

// ---------------------------------------------------------------------------
// ingestion

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IngestError(p.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs `parse` on the file's content, prefixing errors with the file name.
template <typename F>
auto ingest(const fs::path& p, F parse) {
  std::string text = read_file(p);
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw IngestError(p.string() + ": " + e.what());
  } catch (const GraphError& e) {
    throw IngestError(p.string() + ": " + e.what());
  }
}

/// One word sequence per line. Lines starting with '#' are skipped; blank
/// lines are empty sentences.
inline std::vector<Words> read_sentences(std::string_view text) {
  std::vector<Words> out;
  auto lines = detail::numbered_lines(text);
  if (!text.empty() && text.back() == '\n') lines.pop_back();
  for (auto [no, raw] : lines) {
    (void)no;
    auto toks = detail::split_ws(raw);
    if (!toks.empty() && toks[0].front() == '#') continue;
    out.emplace_back(toks.begin(), toks.end());
  }
  return out;
}

/// One update per line; an empty line is the empty update.
inline std::vector<UpdateExpr> read_annotations(std::string_view text) {
  std::vector<UpdateExpr> out;
  auto lines = detail::numbered_lines(text);
  if (!text.empty() && text.back() == '\n') lines.pop_back();
  for (auto [no, raw] : lines) {
    try {
      out.push_back(parse_update(raw));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), no);
    }
  }
  return out;
}

struct Resources {
  std::optional<SubtreeGrammar> grammar;
  std::optional<RewriteTable> rules;
  std::optional<NgramModel> bigram, trigram;
  std::vector<WordGraph> graphs;
  std::vector<Words> references;
  std::vector<UpdateExpr> annotations;
};

inline SubtreeGrammar grammar_from_treebank(const std::vector<Tree>& trees, const RunConfig& c) {
  std::vector<Tree> bank = trees;
  if (c.semantic && c.exception_types) {
    SubtreeConstraints one = c.constraints;
    one.d = 1;
    one.large_graph_d = 1;
    auto report = check_semantic_decidability(extract_subtrees(bank, one));
    bank = assign_exception_types(std::move(bank), report);
  }
  return build_grammar(extract_subtrees(bank, c.constraints), c.start, c.semantic);
}

inline NgramModel model_for(const fs::path& file, const std::vector<Words>* corpus, int order) {
  if (!file.empty()) return ingest(file, [](const std::string& t) { return read_ngram_model(t); });
  if (!corpus) throw ConfigError("an Ngram model needs either a model file or a corpus");
  NgramModel m = train_ngram(*corpus, order);
  if (m.order() != order) throw ConfigError("model order mismatch");
  return m;
}

inline Resources load_resources(const RunConfig& c, bool need_graphs) {
  Resources r;
  if (!c.treebank.empty()) {
    auto trees = ingest(c.treebank, [](const std::string& t) { return read_treebank(t); });
    r.grammar = grammar_from_treebank(trees, c);
  }
  if (!c.rules.empty()) r.rules = ingest(c.rules, [](const std::string& t) { return read_rewrite_table(t); });
  std::optional<std::vector<Words>> corpus;
  if (!c.corpus.empty()) corpus = ingest(c.corpus, [](const std::string& t) { return read_sentences(t); });
  if (!c.bigram_model.empty() || corpus) r.bigram = model_for(c.bigram_model, corpus ? &*corpus : nullptr, 2);
  if (!c.trigram_model.empty() || corpus) r.trigram = model_for(c.trigram_model, corpus ? &*corpus : nullptr, 3);
  if (r.bigram && r.bigram->order() != 2) throw ConfigError("bigram_model is not a bigram model");
  if (r.trigram && r.trigram->order() != 3) throw ConfigError("trigram_model is not a trigram model");
  if (need_graphs) {
    if (c.graphs.empty()) throw ConfigError("config needs 'graphs'");
    r.graphs = ingest(c.graphs, [](const std::string& t) { return read_wordgraph_set(t); });
  }
  if (!c.references.empty())
    r.references = ingest(c.references, [](const std::string& t) { return read_sentences(t); });
  if (!c.annotations.empty())
    r.annotations = ingest(c.annotations, [](const std::string& t) { return read_annotations(t); });
  return r;
}

inline MethodContext method_context(const RunConfig& c, const Resources& r) {
  MethodContext ctx;
  ctx.grammar = r.grammar ? &*r.grammar : nullptr;
  ctx.rules = r.rules ? &*r.rules : nullptr;
  ctx.bigram = r.bigram ? &*r.bigram : nullptr;
  ctx.trigram = r.trigram ? &*r.trigram : nullptr;
  ctx.categories = c.categories;
  ctx.weights = c.weights;
  ctx.lambda = c.lambda;
  ctx.alpha = c.alpha;
  ctx.record_timing = c.record_timing;
  return ctx;
}

// ---------------------------------------------------------------------------
// commands

struct MethodOutcome {
  std::string method;
  std::vector<ScoredPair> pairs;
  std::vector<MethodResult> results;
};

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << text;
}

inline double megabytes(std::size_t bytes) { return static_cast<double>(bytes) / 1e6; }

/// Runs every method over every graph in input order.
inline std::vector<MethodOutcome> evaluate_methods(const std::vector<std::string>& methods,
                                                   const std::vector<WordGraph>& graphs,
                                                   const std::vector<Words>& references,
                                                   const std::vector<UpdateExpr>& annotations,
                                                   const MethodContext& ctx, const SlotAliases& aliases) {
  std::vector<MethodOutcome> out;
  for (const auto& m : methods) {
    MethodSpec spec = parse_method(m);
    MethodOutcome o;
    o.method = m;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      const Words& ref = i < references.size() ? references[i] : Words{};
      MethodResult r;
      try {
        r = run_method(spec, graphs[i], ctx, ref);
      } catch (const GraphError&) {
        r = MethodResult{};
      }
      UpdateExpr test = i < annotations.size() ? annotations[i] : UpdateExpr{};
      ScoredPair p = score_input(r.words, ref, r.update, test, aliases);
      p.elapsed_ms = r.elapsed_ms;
      p.memory_mb = megabytes(r.work_bytes);
      o.pairs.push_back(std::move(p));
      o.results.push_back(std::move(r));
    }
    out.push_back(std::move(o));
  }
  return out;
}

inline std::string join_words(const Words& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " " : "") + w[i];
  return s;
}

inline std::string results_table(const std::vector<MethodOutcome>& outcomes) {
  std::string t = "method\tinput\twords\tupdate\tparsed\telapsed-ms\n";
  for (const auto& o : outcomes)
    for (std::size_t i = 0; i < o.results.size(); ++i) {
      const auto& r = o.results[i];
      t += o.method + '\t' + std::to_string(i + 1) + '\t' + join_words(r.words) + '\t' + to_string(r.update) +
           '\t' + (r.parsed ? "1" : "0") + '\t' + format_fixed(r.elapsed_ms, 3) + '\n';
    }
  return t;
}

struct RunReport {
  std::string accuracy, timeout, baseline, results;
};

inline void check_lengths(const RunConfig& c, const Resources& r, std::size_t n, bool need_references) {
  if (need_references && r.references.size() != n)
    throw ConfigError("references (" + c.references.string() + ") has " + std::to_string(r.references.size()) +
                      " sentences for " + std::to_string(n) + " inputs");
  if (!c.annotations.empty() && r.annotations.size() != n)
    throw ConfigError("annotations (" + c.annotations.string() + ") has " + std::to_string(r.annotations.size()) +
                      " updates for " + std::to_string(n) + " inputs");
}

inline RunReport run_report(const RunConfig& c, const Resources& r) {
  check_lengths(c, r, r.graphs.size(), true);
  MethodContext ctx = method_context(c, r);
  auto outcomes = evaluate_methods(c.methods, r.graphs, r.references, r.annotations, ctx, c.aliases);
  auto baselines = evaluate_methods(c.baselines, r.graphs, r.references, r.annotations, ctx, c.aliases);
  std::vector<std::set<SemanticUnit>> units;
  for (std::size_t i = 0; i < r.graphs.size(); ++i)
    units.push_back(to_semantic_units(i < r.annotations.size() ? r.annotations[i] : UpdateExpr{}, c.aliases));

  RunReport rep;
  rep.accuracy = std::string(kAccuracyHeader) + '\n';
  rep.timeout = timeout_header(c.cutoffs) + '\n';
  for (const auto& o : outcomes) {
    rep.accuracy += accuracy_row(o.method, aggregate(o.pairs)) + '\n';
    rep.timeout += timeout_row(o.method, timeout_table(o.pairs, units, c.cutoffs)) + '\n';
  }
  rep.baseline = "method\tWA\tSA\n";
  for (const auto& o : baselines) {
    AccuracyReport a = aggregate(o.pairs);
    rep.baseline += o.method + '\t' + format_fixed(a.wa, 2) + '\t' + format_fixed(a.sa, 2) + '\n';
  }
  outcomes.insert(outcomes.end(), baselines.begin(), baselines.end());
  rep.results = results_table(outcomes);
  return rep;
}

/// Writes accuracy.tsv, timeout.tsv, baseline.tsv and results.tsv.
inline void cmd_run(const RunConfig& c) {
  Resources r = load_resources(c, true);
  RunReport rep = run_report(c, r);
  fs::create_directories(c.output);
  write_text(c.output / "accuracy.tsv", rep.accuracy);
  write_text(c.output / "timeout.tsv", rep.timeout);
  write_text(c.output / "baseline.tsv", rep.baseline);
  write_text(c.output / "results.tsv", rep.results);
}

struct SentenceReport {
  std::string accuracy, by_length, results;
};

inline SentenceReport sentence_report(const RunConfig& c, const Resources& r) {
  if (r.references.empty()) throw ConfigError("sentence evaluation needs 'references'");
  check_lengths(c, r, r.references.size(), false);
  MethodContext ctx = method_context(c, r);
  std::vector<WordGraph> chains;
  for (const auto& s : r.references) {
    if (s.empty()) throw ConfigError("sentence evaluation cannot use an empty reference sentence");
    chains.push_back(make_chain(s, 0.0));
  }
  // string accuracy is meaningless on the reference itself
  auto outcomes = evaluate_methods(c.methods, chains, {}, r.annotations, ctx, c.aliases);

  SentenceReport rep;
  rep.accuracy = "method\tmatch\tprec\trecall\tca\tcpu-total\tcpu-max\tmem-max\n";
  rep.by_length = "method\tall";
  for (std::size_t b : c.length_bins) rep.by_length += "\t>=" + std::to_string(b);
  rep.by_length += "\n#instances\t" + std::to_string(r.references.size());
  for (std::size_t b : c.length_bins) {
    std::size_t k = 0;
    for (const auto& s : r.references) k += s.size() >= b;
    rep.by_length += '\t' + std::to_string(k);
  }
  rep.by_length += '\n';
  for (const auto& o : outcomes) {
    AccuracyReport a = aggregate(o.pairs);
    rep.accuracy += o.method + '\t' + format_fixed(a.exact_match, 2) + '\t' + format_fixed(a.precision, 2) + '\t' +
                    format_fixed(a.recall, 2) + '\t' + format_fixed(a.ca, 2) + '\t' + format_fixed(a.cpu_total, 1) +
                    '\t' + format_fixed(a.cpu_max, 1) + '\t' + format_fixed(a.mem_max, 3) + '\n';
    rep.by_length += o.method + '\t' + format_fixed(a.ca, 2);
    for (std::size_t b : c.length_bins) {
      std::vector<ScoredPair> subset;
      for (std::size_t i = 0; i < o.pairs.size(); ++i)
        if (r.references[i].size() >= b) subset.push_back(o.pairs[i]);
      rep.by_length += '\t' + (subset.empty() ? std::string("-") : format_fixed(aggregate(subset).ca, 2));
    }
    rep.by_length += '\n';
  }
  rep.results = results_table(outcomes);
  return rep;
}

/// Writes sentence_accuracy.tsv, sentence_length.tsv and sentence_results.tsv.
inline void cmd_sentences(const RunConfig& c) {
  Resources r = load_resources(c, false);
  SentenceReport rep = sentence_report(c, r);
  fs::create_directories(c.output);
  write_text(c.output / "sentence_accuracy.tsv", rep.accuracy);
  write_text(c.output / "sentence_length.tsv", rep.by_length);
  write_text(c.output / "sentence_results.tsv", rep.results);
}

inline std::string stats_row(const std::string& name, const GraphStats& s) {
  return name + '\t' + std::to_string(s.graphs) + '\t' + std::to_string(s.transitions) + '\t' +
         std::to_string(s.states) + '\t' + std::to_string(s.words) + '\t' + format_fixed(s.t_per_w, 1) + '\t' +
         std::to_string(s.max_t) + '\t' + std::to_string(s.max_s) + '\n';
}

/// Graph-set characterization before and after epsilon removal.
inline std::string stats_table(const std::vector<WordGraph>& graphs, const std::vector<Words>& references) {
  if (graphs.empty()) throw ConfigError("graph set is empty");
  std::vector<WordGraph> normalised;
  for (const auto& g : graphs) normalised.push_back(normalize_epsilons(g));
  std::string t = "set\tgraphs\ttrans\tstates\twords\tt/w\tmax(t)\tmax(s)\n";
  t += stats_row("input", collect_stats(graphs, references));
  t += stats_row("normalised", collect_stats(normalised, references));
  return t;
}

}  // namespace wgp
