#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include "wgp/pipeline.hpp"

using namespace wgp;

namespace {

const fs::path kData = WGP_DATA_DIR;

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("wgp_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(const std::string& args) {
  std::string cmd = std::string(WGP_CLI) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::size_t b = 0;
  while (b < text.size()) {
    std::size_t e = text.find('\n', b);
    if (e == std::string::npos) e = text.size();
    out.push_back(text.substr(b, e - b));
    b = e + 1;
  }
  return out;
}

std::size_t columns(const std::string& line) { return std::count(line.begin(), line.end(), '\t') + 1; }

RunConfig ovis_config() {
  RunConfig c = load_config(kData / "ovis" / "config.json");
  c.record_timing = false;
  return c;
}

}  // namespace

TEST(Config, Defaults) {
  RunConfig c = parse_config(nlohmann::json::object());
  EXPECT_EQ(c.lambda, 0.5);
  EXPECT_EQ(c.alpha, 1.0);
  EXPECT_EQ(c.cutoffs, default_cutoffs());
  EXPECT_EQ(c.start, "S");
}

TEST(Config, RelativePathsResolveAgainstConfigDirectory) {
  RunConfig c = load_config(kData / "ovis" / "config.json");
  EXPECT_EQ(c.treebank, kData / "ovis" / "treebank.txt");
  EXPECT_TRUE(c.semantic);
  EXPECT_EQ(c.methods.size(), 8u);
  EXPECT_EQ(c.categories, (std::set<std::string>{"PP", "S"}));
}

TEST(Config, Rejections) {
  using nlohmann::json;
  EXPECT_THROW(parse_config(json{{"treebnk", "x"}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"lambda", 1.5}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"alpha", -1}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"methods", {"b(bi,0)"}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"lambda", "half"}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"constraints", {{"d", 0}}}}), ConfigError);
  EXPECT_THROW(parse_config(json::array()), ConfigError);
  EXPECT_THROW(load_config(kData / "missing.json"), ConfigError);
}

TEST(Ingest, SentencesAndAnnotations) {
  EXPECT_EQ(read_sentences("a b\n\nc\n"), (std::vector<Words>{{"a", "b"}, {}, {"c"}}));
  auto us = read_annotations("x.a\n\ny.(b;c)\n");
  ASSERT_EQ(us.size(), 3u);
  EXPECT_TRUE(us[1].empty());
  EXPECT_THROW(read_annotations("x.(a\n"), ParseError);
}

TEST(Ingest, MissingFile) { EXPECT_THROW(read_file(kData / "nope.txt"), IngestError); }

TEST(Cli, ExitCodes) {
  fs::path dir = scratch("cli");
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli(""), 2);
  EXPECT_EQ(cli("run"), 2);
  EXPECT_EQ(cli("bogus"), 2);
  EXPECT_EQ(cli("train-lm --corpus " + (kData / "ovis" / "corpus.txt").string() + " --order 4"), 2);
  EXPECT_EQ(cli("run --config " + (kData / "missing.json").string()), 2);
  write_text(dir / "bad.json", "{\"methods\": [\"d2\"], \"colour\": 1}");
  EXPECT_EQ(cli("run --config " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(cli("stats --graphs " + (dir / "none.wg").string() + " --references x"), 1);
  write_text(dir / "broken.wg", "WG 0 FINAL 2\n0 1 a 1\n1 0 b 1\n");
  write_text(dir / "refs.txt", "a b\n");
  EXPECT_EQ(cli("stats --graphs " + (dir / "broken.wg").string() + " --references " + (dir / "refs.txt").string()), 1);
  EXPECT_EQ(cli("stats --graphs " + (kData / "ovis" / "graphs.wg").string() + " --references " +
                (kData / "ovis" / "references.txt").string() + " --output " + (dir / "stats.tsv").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "stats.tsv"));
}

TEST(Cli, RunIsDeterministicWithoutTiming) {
  fs::path a = scratch("run_a"), b = scratch("run_b");
  std::string cfg = (kData / "ovis" / "config.json").string();
  ASSERT_EQ(cli("run --config " + cfg + " --no-timing --output " + a.string()), 0);
  ASSERT_EQ(cli("run --config " + cfg + " --no-timing --output " + b.string()), 0);
  for (const char* f : {"accuracy.tsv", "timeout.tsv", "baseline.tsv", "results.tsv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  }
}

TEST(Cli, MethodOverride) {
  fs::path dir = scratch("override");
  std::string cfg = (kData / "ovis" / "config.json").string();
  ASSERT_EQ(cli("run --config " + cfg + " --no-timing --method d2 --output " + dir.string()), 0);
  auto rows = lines(read_file(dir / "accuracy.tsv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].substr(0, 3), "d2\t");
  EXPECT_EQ(cli("run --config " + cfg + " --method z9 --output " + dir.string()), 2);
}

TEST(Run, ReportShapes) {
  RunConfig c = ovis_config();
  Resources r = load_resources(c, true);
  RunReport rep = run_report(c, r);
  auto acc = lines(rep.accuracy);
  ASSERT_EQ(acc.size(), c.methods.size() + 1);
  EXPECT_EQ(acc[0], kAccuracyHeader);
  for (std::size_t i = 1; i < acc.size(); ++i) {
    EXPECT_EQ(columns(acc[i]), 10u);
    EXPECT_EQ(acc[i].substr(0, acc[i].find('\t')), c.methods[i - 1]);
  }
  auto to = lines(rep.timeout);
  EXPECT_EQ(to[0], "method\t100\t500\t1000\t5000\t10000\t>");
  for (const auto& row : to) EXPECT_EQ(columns(row), 7u);
  auto base = lines(rep.baseline);
  EXPECT_EQ(base[0], "method\tWA\tSA");
  EXPECT_EQ(base.size(), c.baselines.size() + 1);
  auto res = lines(rep.results);
  EXPECT_EQ(res[0], "method\tinput\twords\tupdate\tparsed\telapsed-ms");
  EXPECT_EQ(res.size(), 1 + (c.methods.size() + c.baselines.size()) * r.graphs.size());
}

TEST(Run, PossibleBoundsSpeechPerInput) {
  RunConfig c = ovis_config();
  Resources r = load_resources(c, true);
  MethodContext ctx = method_context(c, r);
  ASSERT_EQ(r.graphs.size(), r.references.size());
  for (std::size_t i = 0; i < r.graphs.size(); ++i) {
    const Words& ref = r.references[i];
    double speech = word_accuracy(run_method("speech", r.graphs[i], ctx, ref).words, ref);
    double possible = word_accuracy(run_method("possible", r.graphs[i], ctx, ref).words, ref);
    EXPECT_GE(possible, speech) << "input " << i;
    for (const char* m : {"speech_bigram", "b(tr,2)", "d2"})
      EXPECT_GE(possible, word_accuracy(run_method(m, r.graphs[i], ctx, ref).words, ref)) << m << " input " << i;
  }
}

TEST(Run, AnnotationCountMismatch) {
  RunConfig c = ovis_config();
  Resources r = load_resources(c, true);
  r.annotations.pop_back();
  EXPECT_THROW(run_report(c, r), ConfigError);
}

TEST(Stats, TableShape) {
  auto graphs = read_wordgraph_set(read_file(kData / "ovis" / "graphs.wg"));
  auto refs = read_sentences(read_file(kData / "ovis" / "references.txt"));
  auto t = lines(stats_table(graphs, refs));
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0], "set\tgraphs\ttrans\tstates\twords\tt/w\tmax(t)\tmax(s)");
  EXPECT_EQ(t[1].substr(0, 6), "input\t");
  EXPECT_EQ(t[2].substr(0, 11), "normalised\t");
  EXPECT_THROW(stats_table({}, {}), ConfigError);
}

TEST(Stats, NormalisedRowHasNoEpsilons) {
  auto graphs = read_wordgraph_set(read_file(kData / "ovis" / "graphs.wg"));
  bool any_eps = false;
  for (const auto& g : graphs) {
    any_eps = any_eps || g.has_epsilons();
    EXPECT_FALSE(normalize_epsilons(g).has_epsilons());
  }
  EXPECT_TRUE(any_eps);
}

TEST(Sentences, ReportShapes) {
  RunConfig c = ovis_config();
  c.methods = {"d2", "d4"};
  Resources r = load_resources(c, false);
  SentenceReport rep = sentence_report(c, r);
  auto acc = lines(rep.accuracy);
  EXPECT_EQ(acc[0], "method\tmatch\tprec\trecall\tca\tcpu-total\tcpu-max\tmem-max");
  ASSERT_EQ(acc.size(), 3u);
  for (const auto& row : acc) EXPECT_EQ(columns(row), 8u);
  auto len = lines(rep.by_length);
  EXPECT_EQ(len[0], "method\tall\t>=2\t>=4\t>=6\t>=8\t>=10");
  EXPECT_EQ(len[1].substr(0, 11), "#instances\t");
  EXPECT_EQ(len.size(), 4u);
}

TEST(Sentences, MatchesDirectParse) {
  RunConfig c = ovis_config();
  Resources r = load_resources(c, false);
  MethodContext ctx = method_context(c, r);
  for (const auto& s : r.references) {
    auto direct = mpd_sentence(*r.grammar, s);
    auto m = run_method("d4", make_chain(s, 0.0), ctx);
    EXPECT_EQ(m.parsed, direct.derivation.has_value());
    if (direct.derivation) {
      EXPECT_EQ(m.update, derive_update(*direct.derivation, *r.rules));
    }
  }
}

TEST(Cli, SentencesWritesTables) {
  fs::path dir = scratch("sentences");
  ASSERT_EQ(cli("sentences --config " + (kData / "ovis" / "config.json").string() +
                " --no-timing --method d2 --output " + dir.string()),
            0);
  for (const char* f : {"sentence_accuracy.tsv", "sentence_length.tsv", "sentence_results.tsv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
}

TEST(Cli, TrainLmRoundTrips) {
  fs::path dir = scratch("train");
  fs::path corpus = kData / "ovis" / "corpus.txt";
  ASSERT_EQ(cli("train-lm --corpus " + corpus.string() + " --order 2 --output " + (dir / "bi.lm").string()), 0);
  NgramModel m = read_ngram_model(read_file(dir / "bi.lm"));
  NgramModel direct = train_ngram(read_sentences(read_file(corpus)), 2);
  EXPECT_EQ(m.order(), 2);
  EXPECT_EQ(write_ngram_model(m), write_ngram_model(direct));
}

TEST(Cli, ExtractGrammarMatchesLibrary) {
  fs::path dir = scratch("extract");
  fs::path tb = kData / "ovis" / "treebank.txt";
  ASSERT_EQ(cli("extract-grammar --treebank " + tb.string() + " -d 2 --output " + (dir / "g.txt").string()), 0);
  SubtreeConstraints c;
  c.d = 2;
  c.large_graph_d = 2;
  auto expected = extract_subtrees(read_treebank(read_file(tb)), c);
  auto got = read_multiset(read_file(dir / "g.txt"));
  ASSERT_EQ(got.entries.size(), expected.entries.size());
  for (const auto& [k, e] : expected.entries) EXPECT_EQ(got.entries.at(k).count, e.count);
  EXPECT_EQ(cli("extract-grammar --treebank " + tb.string() + " -d 0"), 2);
}
