#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "iotrace/grammar.hpp"

namespace iotrace {
namespace {

constexpr std::uint32_t a = 0;
constexpr std::uint32_t b = 1;

std::vector<std::uint32_t> nested_loop(int m, int n) {
  std::vector<std::uint32_t> seq;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) seq.push_back(a);
    seq.push_back(b);
  }
  return seq;
}

TEST(Grammar, NestedLoopMatchesTwoRuleForm) {
  // S -> A^3, A -> a^4 b
  auto g = build_grammar(nested_loop(3, 4));
  Grammar expected(Grammar::RuleMap{
      {kStartRule, {{-2, 3}}},
      {-2, {{0, 4}, {1, 1}}},
  });
  EXPECT_EQ(g, expected);
  EXPECT_EQ(g.rule_count(), 2u);
  EXPECT_EQ(g.symbol_count(), 3u);
  g.check_invariants();
}

TEST(Grammar, NestedLoopSizeIsConstantInLoopBounds) {
  for (int m = 2; m <= 50; ++m) {
    for (int n = 2; n <= 50; ++n) {
      auto seq = nested_loop(m, n);
      auto g = build_grammar(seq);
      ASSERT_EQ(g.rule_count(), 2u) << m << "x" << n;
      ASSERT_EQ(g.symbol_count(), 3u) << m << "x" << n;
      ASSERT_EQ(g.start(), (Grammar::Body{{-2, static_cast<std::uint32_t>(m)}}));
      ASSERT_EQ(g.expand(), seq);
    }
  }
}

TEST(Grammar, SingleSymbol) {
  SequiturBuilder builder;
  builder.append(a);
  auto g = builder.snapshot();
  EXPECT_EQ(g.rule_count(), 1u);
  EXPECT_EQ(g.start(), (Grammar::Body{{0, 1}}));
}

TEST(Grammar, AlternatingPairBecomesExponentiatedRule) {
  // Plain Sequitur on "abab" gives S -> C C, C -> a b; coalescing yields C^2.
  auto g = build_grammar(std::vector<std::uint32_t>{a, b, a, b});
  Grammar expected(Grammar::RuleMap{
      {kStartRule, {{-2, 2}}},
      {-2, {{0, 1}, {1, 1}}},
  });
  EXPECT_EQ(g, expected);
}

TEST(Grammar, ExpandAppliesRulesDirectly) {
  Grammar g(Grammar::RuleMap{
      {kStartRule, {{-2, 2}}},
      {-2, {{0, 3}, {1, 1}}},
  });
  EXPECT_EQ(g.expand(), (std::vector<std::uint32_t>{a, a, a, b, a, a, a, b}));
}

TEST(Grammar, EmptyGrammarExpandsToNothing) {
  Grammar g;
  EXPECT_TRUE(g.expand().empty());
  EXPECT_EQ(SequiturBuilder().snapshot(), g);
}

TEST(Grammar, RandomSequencesRoundTrip) {
  for (std::uint32_t seed = 0; seed < 1000; ++seed) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<std::uint32_t> len_dist(0, 400);
    std::uniform_int_distribution<std::uint32_t> alphabet_dist(1, 6);
    auto len = len_dist(rng);
    std::uniform_int_distribution<std::uint32_t> sym(0, alphabet_dist(rng) - 1);
    std::vector<std::uint32_t> log;
    SequiturBuilder builder;
    for (std::uint32_t i = 0; i < len; ++i) {
      // Mix runs and repeats of earlier blocks so rules and exponents both appear.
      if (!log.empty() && rng() % 4 == 0) {
        auto start = rng() % log.size();
        auto n = std::min<std::size_t>(1 + rng() % 8, log.size() - start);
        for (std::size_t k = 0; k < n; ++k) {
          auto t = log[start + k];
          log.push_back(t);
          builder.append(t);
        }
      } else {
        auto t = sym(rng);
        log.push_back(t);
        builder.append(t);
      }
    }
    auto g = builder.snapshot();
    ASSERT_EQ(g.expand(), log) << "seed " << seed;
    ASSERT_NO_THROW(g.check_invariants()) << "seed " << seed;
    ASSERT_NO_THROW(builder.check_index()) << "seed " << seed;
  }
}

TEST(Grammar, InvariantsHoldAfterEveryAppend) {
  for (std::uint32_t seed = 0; seed < 60; ++seed) {
    std::mt19937 rng(seed);
    SequiturBuilder builder;
    std::vector<std::uint32_t> log;
    for (int i = 0; i < 300; ++i) {
      std::uint32_t t = (rng() % 3 == 0) ? static_cast<std::uint32_t>(rng() % 5)
                                         : (log.empty() ? 0 : log[log.size() - 1 - rng() % std::min<std::size_t>(log.size(), 6)]);
      builder.append(t);
      log.push_back(t);
      auto g = builder.snapshot();
      ASSERT_NO_THROW(g.check_invariants()) << "seed " << seed << " step " << i;
      ASSERT_NO_THROW(builder.check_index()) << "seed " << seed << " step " << i;
      ASSERT_EQ(g.expanded_length(), log.size());
    }
    ASSERT_EQ(builder.snapshot().expand(), log);
  }
}

TEST(Grammar, LongRunsStayCompact) {
  SequiturBuilder builder;
  for (int i = 0; i < 100000; ++i) builder.append(7);
  auto g = builder.snapshot();
  EXPECT_EQ(g.start(), (Grammar::Body{{7, 100000}}));
}

TEST(Grammar, RemapIdentityIsStructurallyEqual) {
  auto g = build_grammar(nested_loop(5, 3));
  std::vector<std::uint32_t> identity{0, 1};
  EXPECT_EQ(remap_terminals(g, identity), g);
}

TEST(Grammar, RemapMergingTerminalsRecoalesces) {
  Grammar g(Grammar::RuleMap{
      {kStartRule, {{-2, 2}}},
      {-2, {{0, 1}, {1, 1}}},
  });
  std::vector<std::uint32_t> to_x{5, 5};
  auto r = remap_terminals(g, to_x);
  EXPECT_EQ(r.expand(), (std::vector<std::uint32_t>{5, 5, 5, 5}));
  EXPECT_NO_THROW(r.check_invariants());
  EXPECT_EQ(r.start(), (Grammar::Body{{5, 4}}));
}

TEST(Grammar, RemapRequiresTotalMapping) {
  auto g = build_grammar(nested_loop(2, 2));
  std::vector<std::uint32_t> partial{3};
  try {
    remap_terminals(g, partial);
    FAIL() << "expected IncompleteMapping";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IncompleteMapping);
  }
}

TEST(Grammar, RemapIsPointwiseOnExpansion) {
  std::mt19937 rng(42);
  std::vector<std::uint32_t> seq;
  for (int i = 0; i < 500; ++i) seq.push_back(rng() % 6);
  auto g = build_grammar(seq);
  std::vector<std::uint32_t> mapping{3, 3, 1, 0, 1, 2};
  auto r = remap_terminals(g, mapping);
  std::vector<std::uint32_t> expected;
  for (auto t : seq) expected.push_back(mapping[t]);
  EXPECT_EQ(r.expand(), expected);
  EXPECT_NO_THROW(r.check_invariants());
}

TEST(Grammar, EqualityUsesCanonicalBytes) {
  auto g = build_grammar(std::vector<std::uint32_t>{a, a});
  auto h = build_grammar(std::vector<std::uint32_t>{a, a, a});
  EXPECT_TRUE(grammar_equal(g, g));
  EXPECT_FALSE(grammar_equal(g, h));
}

TEST(Grammar, SerializationRoundTrips) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint32_t> seq;
    for (int i = 0; i < 200; ++i) seq.push_back(rng() % 4);
    auto g = build_grammar(seq);
    auto bytes = g.serialize();
    auto back = Grammar::deserialize(bytes);
    EXPECT_EQ(back, g);
    EXPECT_EQ(back.serialize(), bytes);
  }
}

TEST(Grammar, DanglingAndCyclicRulesAreMalformed) {
  EXPECT_THROW(Grammar(Grammar::RuleMap{{kStartRule, {{-2, 1}}}}), Error);
  EXPECT_THROW(Grammar(Grammar::RuleMap{{kStartRule, {{-2, 1}}}, {-2, {{-3, 1}}}, {-3, {{-2, 1}}}}),
               Error);
}

TEST(Grammar, ExpansionBoundGuardsHugeGrammars) {
  // Three nested levels of 65535 repetitions: about 2.8e14 terminals.
  Grammar::RuleMap rules{{kStartRule, {{-2, 0xFFFF}}}};
  rules[-2] = {{-3, 0xFFFF}};
  rules[-3] = {{0, 0xFFFF}};
  Grammar g(std::move(rules));
  try {
    (void)g.expand(1000);
    FAIL() << "expected MalformedGrammar";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MalformedGrammar);
  }
}

}  // namespace
}  // namespace iotrace
