#pragma once

// String and semantic accuracy: Levenshtein word accuracy, semantic-unit
// scoring, corpus aggregation and time-out tables.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "wgp/error.hpp"
#include "wgp/lattice.hpp"
#include "wgp/update.hpp"

namespace wgp {

inline std::size_t levenshtein(const Words& a, const Words& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

/// Percentage; negative when `best` is much longer than `test`.
inline double word_accuracy(const Words& best, const Words& test) {
  if (test.empty()) throw ConfigError("word accuracy is undefined for an empty reference");
  double d = static_cast<double>(levenshtein(best, test));
  return (1.0 - d / static_cast<double>(test.size())) * 100.0;
}

struct PairScore {
  bool match = false;
  std::size_t su = 0;    // units in the annotation
  std::size_t su_s = 0;  // substitutions
  std::size_t su_i = 0;  // insertions
  std::size_t su_d = 0;  // deletions
  std::size_t produced = 0;
  std::size_t correct = 0;
};

/// Set comparison of semantic units. Unmatched units sharing function and
/// slot are paired off as substitutions in value order.
inline PairScore score_units(const std::set<SemanticUnit>& best, const std::set<SemanticUnit>& test) {
  PairScore s;
  s.su = test.size();
  s.produced = best.size();
  s.match = best == test;
  using Key = std::pair<std::string, std::string>;
  std::map<Key, std::vector<std::string>> extra, missing;
  for (const auto& u : best)
    if (!test.count(u)) extra[{u.function, u.slot}].push_back(u.value);
    else ++s.correct;
  for (const auto& u : test)
    if (!best.count(u)) missing[{u.function, u.slot}].push_back(u.value);
  for (const auto& [k, vs] : missing) {
    auto it = extra.find(k);
    std::size_t paired = it == extra.end() ? 0 : std::min(vs.size(), it->second.size());
    s.su_s += paired;
    s.su_d += vs.size() - paired;
  }
  for (const auto& [k, vs] : extra) {
    auto it = missing.find(k);
    std::size_t paired = it == missing.end() ? 0 : std::min(vs.size(), it->second.size());
    s.su_i += vs.size() - paired;
  }
  return s;
}

inline PairScore score_pair(const UpdateExpr& best, const UpdateExpr& test,
                            const SlotAliases& aliases = SlotAliases{}) {
  return score_units(to_semantic_units(best, aliases), to_semantic_units(test, aliases));
}

/// One evaluated input.
struct ScoredPair {
  Words best_words;
  Words test_words;  // empty: no string accuracy for this input
  PairScore semantic;
  double elapsed_ms = 0.0;
  double memory_mb = 0.0;
};

inline ScoredPair score_input(const Words& best_words, const Words& test_words, const UpdateExpr& best,
                              const UpdateExpr& test, const SlotAliases& aliases = SlotAliases{}) {
  ScoredPair p;
  p.best_words = best_words;
  p.test_words = test_words;
  p.semantic = score_pair(best, test, aliases);
  return p;
}

struct AccuracyReport {
  double wa = 100.0;
  double sa = 100.0;
  double exact_match = 100.0;
  double precision = 100.0;
  double recall = 100.0;
  double ca = 100.0;
  std::size_t inputs = 0;
  std::size_t su = 0, su_s = 0, su_i = 0, su_d = 0;
  std::size_t produced = 0, correct = 0;
  double cpu_total = 0.0;  // ms
  double cpu_max = 0.0;    // ms
  double mem_max = 0.0;    // MB
  bool has_string = false;
};

inline double percentage(std::size_t num, std::size_t den, double vacuous) {
  return den ? 100.0 * static_cast<double>(num) / static_cast<double>(den) : vacuous;
}

/// Corpus-level figures over summed counts. WA and SA use only inputs that
/// carry a reference word sequence.
inline AccuracyReport aggregate(const std::vector<ScoredPair>& pairs) {
  AccuracyReport r;
  r.inputs = pairs.size();
  std::size_t words = 0, dist = 0, sentences = 0, sentences_ok = 0, matches = 0;
  for (const auto& p : pairs) {
    if (!p.test_words.empty()) {
      words += p.test_words.size();
      std::size_t d = levenshtein(p.best_words, p.test_words);
      dist += d;
      ++sentences;
      if (d == 0) ++sentences_ok;
    }
    const PairScore& s = p.semantic;
    r.su += s.su;
    r.su_s += s.su_s;
    r.su_i += s.su_i;
    r.su_d += s.su_d;
    r.produced += s.produced;
    r.correct += s.correct;
    if (s.match) ++matches;
    r.cpu_total += p.elapsed_ms;
    r.cpu_max = std::max(r.cpu_max, p.elapsed_ms);
    r.mem_max = std::max(r.mem_max, p.memory_mb);
  }
  r.has_string = sentences > 0;
  if (words) r.wa = (1.0 - static_cast<double>(dist) / static_cast<double>(words)) * 100.0;
  r.sa = percentage(sentences_ok, sentences, 100.0);
  r.exact_match = percentage(matches, pairs.size(), 100.0);
  r.precision = percentage(r.correct, r.produced, 100.0);
  r.recall = percentage(r.correct, r.su, 100.0);
  std::size_t errors = r.su_s + r.su_i + r.su_d;
  if (r.su)
    r.ca = (1.0 - static_cast<double>(errors) / static_cast<double>(r.su)) * 100.0;
  else
    r.ca = errors ? 0.0 : 100.0;
  return r;
}

/// Time-out cutoffs used by default, in milliseconds.
inline const std::vector<double>& default_cutoffs() {
  static const std::vector<double> c{100, 500, 1000, 5000, 10000};
  return c;
}

/// CA per cutoff followed by CA without a cutoff. Inputs slower than a
/// cutoff count as having produced the empty update.
inline std::vector<double> timeout_table(const std::vector<ScoredPair>& pairs,
                                         const std::vector<std::set<SemanticUnit>>& test_units,
                                         const std::vector<double>& cutoffs) {
  if (pairs.size() != test_units.size())
    throw ConfigError("timeout table needs one annotation per input");
  std::vector<double> out;
  for (double cutoff : cutoffs) {
    std::vector<ScoredPair> filtered = pairs;
    for (std::size_t i = 0; i < filtered.size(); ++i)
      if (filtered[i].elapsed_ms > cutoff) filtered[i].semantic = score_units({}, test_units[i]);
    out.push_back(aggregate(filtered).ca);
  }
  out.push_back(aggregate(pairs).ca);
  return out;
}

// ---------------------------------------------------------------------------
// report rows

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v == 0.0 ? 0.0 : v);
  return buf;
}

inline constexpr std::string_view kAccuracyHeader = "method\tWA\tSA\tmatch\tprec\trecall\tca\tcpu-total\tcpu-max\tmem-max";

inline std::string accuracy_row(const std::string& method, const AccuracyReport& r) {
  std::string row = method;
  auto col = [&](const std::string& v) { row += '\t' + v; };
  col(r.has_string ? format_fixed(r.wa, 2) : "-");
  col(r.has_string ? format_fixed(r.sa, 2) : "-");
  col(format_fixed(r.exact_match, 2));
  col(format_fixed(r.precision, 2));
  col(format_fixed(r.recall, 2));
  col(format_fixed(r.ca, 2));
  col(format_fixed(r.cpu_total, 1));
  col(format_fixed(r.cpu_max, 1));
  col(format_fixed(r.mem_max, 3));
  return row;
}

inline std::string timeout_header(const std::vector<double>& cutoffs) {
  std::string h = "method";
  for (double c : cutoffs) h += '\t' + format_fixed(c, 0);
  return h + "\t>";
}

inline std::string timeout_row(const std::string& method, const std::vector<double>& cas) {
  std::string row = method;
  for (double v : cas) row += '\t' + format_fixed(v, 2);
  return row;
}

}  // namespace wgp
