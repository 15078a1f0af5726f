#include <gtest/gtest.h>

#include <fstream>
#include <functional>
#include <random>

#include "oracles.hpp"
#include "wgp/treebank.hpp"

using namespace wgp;

namespace {

const SubtreeConstraints kGenerous{10, 100, 100, 100, 350, 2};

std::map<std::string, std::size_t> entry_counts(const SubtreeMultiset& ms) {
  std::map<std::string, std::size_t> out;
  for (const auto& [k, e] : ms.entries) out[k] = e.count;
  return out;
}

}  // namespace

TEST(ReadTreebank, FiveNodeTree) {
  auto trees = read_treebank("(S (A a) (B b))\n");
  ASSERT_EQ(trees.size(), 1u);
  EXPECT_EQ(count_nodes(trees[0]), 5u);
  EXPECT_EQ(yield(trees[0]), (Words{"a", "b"}));
}

TEST(ReadTreebank, ChildlessNodeIsAnError) {
  EXPECT_THROW(read_treebank("(S (A a) (B))\n"), ParseError);
}

TEST(ReadTreebank, UnbalancedBrackets) {
  EXPECT_THROW(read_treebank("(S (A a) (B b)\n"), ParseError);
  EXPECT_THROW(read_treebank("(S (A a)) (B b))\n"), ParseError);
}

TEST(ReadTreebank, MixedAnnotationRejected) {
  try {
    read_treebank("(S:1,1:r (A:1,1:r a))\n(S (A a))\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(ReadTreebank, SemanticFixtureRoundTrips) {
  std::string text =
      "(S:1,1:s (PER:6,1:nil ik) (VP:1,2:want (V:5,1:nil wil) (PP:2,1:to (P:4,1:nil naar) (NP:3,1:town groningen))))\n";
  auto trees = read_treebank(text);
  EXPECT_EQ(write_treebank(trees), text);
  EXPECT_EQ(trees[0].semtype, (SemType{1, 1}));
  EXPECT_EQ(trees[0].semrule, "s");
}

TEST(ReadTreebank, FixtureTreebankRoundTrips) {
  std::ifstream in(std::string(WGP_DATA_DIR) + "/ovis/treebank.txt");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto trees = read_treebank(text);
  ASSERT_FALSE(trees.empty());
  EXPECT_EQ(read_treebank(write_treebank(trees)), trees);
}

TEST(ExtractSubtrees, HandEnumeration) {
  auto ms = extract_subtrees(read_treebank("(S (A a) (B b))"), kGenerous);
  std::map<std::string, std::size_t> expected{
      {"(S (A) (B))", 1}, {"(S (A a) (B))", 1}, {"(S (A) (B b))", 1}, {"(S (A a) (B b))", 1}, {"(A a)", 1}, {"(B b)", 1}};
  EXPECT_EQ(entry_counts(ms), expected);
  EXPECT_EQ(ms.roots, (std::map<std::string, std::size_t>{{"A", 1}, {"B", 1}, {"S", 4}}));
}

TEST(ExtractSubtrees, DepthOneOnly) {
  SubtreeConstraints c = kGenerous;
  c.d = 1;
  c.large_graph_d = 1;
  auto ms = extract_subtrees(read_treebank("(S (A a) (B b))"), c);
  EXPECT_EQ(ms.roots, (std::map<std::string, std::size_t>{{"A", 1}, {"B", 1}, {"S", 1}}));
}

TEST(ExtractSubtrees, SiteLimitWithDepthOneExemption) {
  SubtreeConstraints c = kGenerous;
  c.n = 1;
  auto ms = extract_subtrees(read_treebank("(S (A a) (B b))"), c);
  EXPECT_TRUE(ms.entries.count("(S (A a) (B))"));
  EXPECT_TRUE(ms.entries.count("(S (A) (B b))"));
  EXPECT_TRUE(ms.entries.count("(S (A) (B))"));
}

TEST(ExtractSubtrees, ConsecutiveLexicalLimit) {
  SubtreeConstraints c = kGenerous;
  c.L = 1;
  auto ms = extract_subtrees(read_treebank("(S (A a) (B b))"), c);
  EXPECT_FALSE(ms.entries.count("(S (A a) (B b))"));
  EXPECT_TRUE(ms.entries.count("(S (A a) (B))"));
}

TEST(ExtractSubtrees, CountsDistinctOccurrences) {
  auto once = extract_subtrees(read_treebank("(S (A a) (B b))"), kGenerous);
  auto twice = extract_subtrees(read_treebank("(S (A a) (B b))\n(S (A a) (B b))"), kGenerous);
  for (const auto& [k, e] : twice.entries) EXPECT_EQ(e.count, 2 * once.entries.at(k).count);
}

TEST(ExtractSubtrees, MatchesIndependentEnumerator) {
  std::mt19937 rng(21);
  oracle::TreeSpec spec;
  const std::vector<SubtreeConstraints> grid{{4, 9, 3, 2, 350, 2}, {2, 9, 3, 2, 350, 2}, {3, 2, 1, 1, 350, 1},
                                             {kGenerous}};
  for (int i = 0; i < 60; ++i) {
    auto bank = oracle::random_treebank(rng, spec, 5);
    for (const auto& c : grid) {
      auto ms = extract_subtrees(bank, c);
      auto expected = oracle::extract(bank, c);
      ASSERT_EQ(entry_counts(ms), expected);
      std::map<std::string, std::size_t> roots;
      for (const auto& [k, e] : ms.entries) roots[e.fragment.label] += e.count;
      EXPECT_EQ(ms.roots, roots);
    }
  }
}

TEST(ExtractSubtrees, ClosedUnderExtraction) {
  std::mt19937 rng(22);
  oracle::TreeSpec spec;
  spec.max_nodes = 9;
  for (int i = 0; i < 30; ++i) {
    auto bank = oracle::random_treebank(rng, spec, 5);
    auto ms = extract_subtrees(bank, kGenerous);
    for (const auto& [k, e] : ms.entries) {
      // fragments of a fragment: subtrees of it at any internal node
      std::function<void(const Tree&)> visit = [&](const Tree& n) {
        if (!n.is_internal()) return;
        for (const auto& f : oracle::fragments_at(n)) EXPECT_TRUE(ms.entries.count(to_string(f))) << to_string(f);
        for (const auto& c : n.children) visit(c);
      };
      visit(e.fragment);
    }
  }
}

TEST(ExtractSubtrees, DepthOneCompleteness) {
  std::mt19937 rng(23);
  oracle::TreeSpec spec;
  for (int i = 0; i < 50; ++i) {
    auto bank = oracle::random_treebank(rng, spec, 5);
    SubtreeConstraints tight{1, 1, 1, 1, 350, 1};
    auto ms = extract_subtrees(bank, tight);
    std::function<void(const Tree&)> visit = [&](const Tree& n) {
      if (!n.is_internal()) return;
      Tree d1 = n;
      for (auto& c : d1.children)
        if (c.is_internal()) c = Tree::site(c.label, c.semtype);
      EXPECT_TRUE(ms.entries.count(to_string(d1)));
      for (const auto& c : n.children) visit(c);
    };
    for (const auto& t : bank) visit(t);
  }
}

TEST(ExtractSubtrees, MergeIsOrderIndependent) {
  auto a = extract_subtrees(read_treebank("(S (A a) (B b))"), kGenerous);
  auto b = extract_subtrees(read_treebank("(S (B b) (A a))\n(A (B b))"), kGenerous);
  SubtreeMultiset ab = a, ba = b;
  ab.merge(b);
  ba.merge(a);
  EXPECT_EQ(entry_counts(ab), entry_counts(ba));
  EXPECT_EQ(ab.roots, ba.roots);
}

TEST(Multiset, FileRoundTrip) {
  auto ms = extract_subtrees(read_treebank("(S:1,1:r (A:2,1:q a) (B:1,1:p b))"), kGenerous);
  auto back = read_multiset(write_multiset(ms));
  EXPECT_EQ(entry_counts(back), entry_counts(ms));
  EXPECT_EQ(back.roots, ms.roots);
}

TEST(Constraints, Validation) {
  EXPECT_THROW((SubtreeConstraints{0, 9, 3, 2, 350, 2}.validate()), ConfigError);
  EXPECT_THROW((SubtreeConstraints{2, 9, 3, 2, 350, 3}.validate()), ConfigError);
  EXPECT_NO_THROW(SubtreeConstraints{}.validate());
}

TEST(Decidability, UniqueRulesAreDecidable) {
  auto ms = extract_subtrees(read_treebank("(S:1,1:s (A:1,1:x a) (B:1,1:y b))\n(S:1,1:s (A:1,1:x a) (B:1,1:y b))"),
                             kGenerous);
  auto r = check_semantic_decidability(ms);
  EXPECT_DOUBLE_EQ(r.decidable_fraction, 1.0);
  EXPECT_TRUE(r.exceptions.empty());
}

TEST(Decidability, OneAmbiguousSignatureAmongTen) {
  std::string text;
  for (int k = 0; k < 10; ++k)
    text += "(X" + std::to_string(k) + ":1,1:r" + std::to_string(k) + " w" + std::to_string(k) + ")\n";
  text += "(X0:1,1:other w0)\n";
  auto ms = extract_subtrees(read_treebank(text), kGenerous);
  auto r = check_semantic_decidability(ms);
  EXPECT_DOUBLE_EQ(r.decidable_fraction, 0.9);
  ASSERT_EQ(r.exceptions.size(), 1u);
  EXPECT_EQ(r.exceptions.begin()->second, (std::set<std::string>{"other", "r0"}));

  auto typed = assign_exception_types(read_treebank(text), r);
  auto after = check_semantic_decidability(extract_subtrees(typed, kGenerous));
  EXPECT_DOUBLE_EQ(after.decidable_fraction, 1.0);
  EXPECT_EQ(typed[0].semtype, (SemType{kExceptionMeet, 1}));
  EXPECT_EQ(typed[10].semtype, (SemType{kExceptionMeet, 0}));
}

TEST(Decidability, EmptyMultisetIsVacuous) {
  auto r = check_semantic_decidability(SubtreeMultiset{});
  EXPECT_DOUBLE_EQ(r.decidable_fraction, 1.0);
  EXPECT_TRUE(r.exceptions.empty());
}
