// Command-line driver. Exit codes: 0 success, 1 input error, 2 config error.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "wgp/wgp.hpp"

namespace {

struct Overrides {
  std::string output;
  std::vector<std::string> methods;
  std::optional<double> lambda, alpha;
  bool no_timing = false;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--output", o.output, "Output directory (overrides the config)");
  cmd->add_option("--method", o.methods, "Method descriptor, repeatable (overrides the config)");
  cmd->add_option("--lambda", o.lambda, "Interpolation weight of grammar against acoustic score");
  cmd->add_option("--alpha", o.alpha, "LM scale for decoding and pruning");
  cmd->add_flag("--no-timing", o.no_timing, "Report zero elapsed times for reproducible output");
}

wgp::RunConfig configured(const std::string& file, const Overrides& o) {
  wgp::RunConfig c = wgp::load_config(file);
  if (!o.output.empty()) c.output = o.output;
  if (!o.methods.empty()) {
    for (const auto& m : o.methods) wgp::parse_method(m);
    c.methods = o.methods;
  }
  if (o.lambda) {
    if (!(*o.lambda >= 0.0 && *o.lambda <= 1.0)) throw wgp::ConfigError("lambda must lie in [0, 1]");
    c.lambda = *o.lambda;
  }
  if (o.alpha) {
    if (!(*o.alpha >= 0.0)) throw wgp::ConfigError("alpha must be non-negative");
    c.alpha = *o.alpha;
  }
  if (o.no_timing) c.record_timing = false;
  return c;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-")
    std::cout << text;
  else
    wgp::write_text(path, text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word-graph parsing and evaluation"};
  app.require_subcommand(1);

  std::string config;
  Overrides run_o, sent_o;

  auto* run = app.add_subcommand("run", "Run methods over a word-graph set and write report tables");
  run->add_option("--config", config, "JSON run configuration")->required();
  add_overrides(run, run_o);

  auto* sentences = app.add_subcommand("sentences", "Run methods over reference sentences");
  sentences->add_option("--config", config, "JSON run configuration")->required();
  add_overrides(sentences, sent_o);

  std::string graphs, references, out;
  auto* stats = app.add_subcommand("stats", "Characterize a word-graph set");
  stats->add_option("--graphs", graphs, "Word-graph set file")->required();
  stats->add_option("--references", references, "Reference sentences, one per graph")->required();
  stats->add_option("--output", out, "Output TSV (default stdout)");

  std::string corpus;
  int order = 3;
  auto* train = app.add_subcommand("train-lm", "Train a Witten-Bell Ngram model");
  train->add_option("--corpus", corpus, "One utterance per line")->required();
  train->add_option("--order", order, "2 or 3")->check(CLI::IsMember({2, 3}));
  train->add_option("--output", out, "Model file (default stdout)");

  std::string treebank, start = "S";
  bool semantic = false;
  wgp::SubtreeConstraints sc;
  auto* extract = app.add_subcommand("extract-grammar", "Extract a subtree multiset from a treebank");
  extract->add_option("--treebank", treebank, "Bracketed treebank")->required();
  extract->add_option("--config", config, "Take constraints and semantic settings from a config");
  extract->add_option("--start", start, "Start category");
  extract->add_flag("--semantic", semantic, "Type-constrained substitution");
  extract->add_option("-d", sc.d, "Maximum subtree depth");
  extract->add_option("-l", sc.l, "Maximum lexical items");
  extract->add_option("-L", sc.L, "Maximum consecutive lexical items");
  extract->add_option("-n", sc.n, "Maximum substitution sites");
  extract->add_option("--output", out, "Grammar file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      wgp::cmd_run(configured(config, run_o));
    } else if (*sentences) {
      wgp::cmd_sentences(configured(config, sent_o));
    } else if (*stats) {
      auto gs = wgp::ingest(graphs, [](const std::string& t) { return wgp::read_wordgraph_set(t); });
      auto refs = wgp::ingest(references, [](const std::string& t) { return wgp::read_sentences(t); });
      emit(out, wgp::stats_table(gs, refs));
    } else if (*train) {
      auto sents = wgp::ingest(corpus, [](const std::string& t) { return wgp::read_sentences(t); });
      emit(out, wgp::write_ngram_model(wgp::train_ngram(sents, order)));
    } else if (*extract) {
      wgp::RunConfig c;
      if (!config.empty()) {
        c = wgp::load_config(config);
      } else {
        sc.large_graph_d = std::min(sc.large_graph_d, sc.d);
        sc.validate();
        c.constraints = sc;
        c.start = start;
        c.semantic = semantic;
      }
      auto trees = wgp::ingest(treebank, [](const std::string& t) { return wgp::read_treebank(t); });
      wgp::SubtreeGrammar g = wgp::grammar_from_treebank(trees, c);
      wgp::SubtreeMultiset ms;
      ms.constraints = c.constraints;
      for (const auto& r : g.rules()) ms.add(r.fragment, r.count);
      emit(out, wgp::write_multiset(ms));
    }
  } catch (const wgp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
