#include <gtest/gtest.h>

#include <random>

#include "schema_forge/patterns.hpp"

namespace sf = schema_forge;
using sf::IntentRole;
using sf::RoleSet;

namespace {

constexpr IntentRole Act = IntentRole::Action;
constexpr IntentRole Arg = IntentRole::Argument;
constexpr IntentRole Prob = IntentRole::Problem;
constexpr IntentRole Ques = IntentRole::Question;

std::vector<RoleSet> ten_set_corpus() {
  std::vector<RoleSet> c;
  for (int i = 0; i < 6; ++i) c.push_back({Act, Arg});
  for (int i = 0; i < 3; ++i) c.push_back({Prob, Arg});
  c.push_back({Ques});
  return c;
}

std::vector<RoleSet> random_corpus(std::mt19937_64& rng, std::size_t n) {
  std::vector<RoleSet> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back(RoleSet(static_cast<std::uint8_t>(1 + rng() % 15)));
  return c;
}

}  // namespace

TEST(Apriori, TenSetExampleMatchesHandEnumeration) {
  auto corpus = ten_set_corpus();
  auto ps = sf::apriori(corpus, 0.05, 0.1);

  // Independent enumeration over every non-empty subset of the universe.
  std::map<std::uint8_t, double> expected;
  for (unsigned mask = 1; mask < 16; ++mask) {
    int hits = 0;
    for (auto s : corpus) hits += (s.mask() & mask) == mask;
    if (hits / 10.0 >= 0.05) expected[static_cast<std::uint8_t>(mask)] = hits / 10.0;
  }
  ASSERT_EQ(ps.patterns.size(), expected.size());
  for (const auto& p : ps.patterns) EXPECT_DOUBLE_EQ(p.support, expected.at(p.roles.mask()));

  EXPECT_DOUBLE_EQ(ps.find({Act, Arg})->support, 0.6);
  EXPECT_DOUBLE_EQ(ps.find({Prob, Arg})->support, 0.3);
  EXPECT_DOUBLE_EQ(ps.find({Ques})->support, 0.1);
  EXPECT_DOUBLE_EQ(ps.find({Arg})->support, 0.9);
  EXPECT_DOUBLE_EQ(ps.find({Act, Arg})->confidence, 1.0);
  EXPECT_EQ(ps.corpus_size, 10u);
}

TEST(Apriori, ZeroSupportEmitsAllFifteenCandidates) {
  auto ps = sf::apriori(ten_set_corpus(), 0.0, 0.0);
  EXPECT_EQ(ps.patterns.size(), sf::kCandidatePatternCount);
  EXPECT_DOUBLE_EQ(ps.find({Act, Prob, Arg, Ques})->support, 0.0);
}

TEST(Apriori, FullSupportOnHeterogeneousCorpusIsEmpty) {
  auto ps = sf::apriori(ten_set_corpus(), 1.0, 0.1);
  EXPECT_TRUE(ps.patterns.empty());
}

TEST(Apriori, EmptyInputThrows) {
  std::vector<RoleSet> none;
  EXPECT_THROW(sf::apriori(none), sf::InvalidArgument);
  EXPECT_THROW(sf::brute_force_patterns(none, 0.1), sf::InvalidArgument);
}

TEST(Apriori, SortedBySizeThenSupport) {
  auto ps = sf::apriori(ten_set_corpus(), 0.0, 0.0);
  for (std::size_t i = 1; i < ps.patterns.size(); ++i) {
    const auto& a = ps.patterns[i - 1];
    const auto& b = ps.patterns[i];
    ASSERT_LE(a.roles.size(), b.roles.size());
    if (a.roles.size() == b.roles.size()) ASSERT_GE(a.support, b.support);
  }
}

TEST(BruteForce, SingleSet) {
  std::vector<RoleSet> c = {{Act}};
  auto ps = sf::brute_force_patterns(c, 0.5);
  ASSERT_EQ(ps.patterns.size(), 1u);
  EXPECT_EQ(ps.patterns[0].roles, RoleSet({Act}));
  EXPECT_DOUBLE_EQ(ps.patterns[0].support, 1.0);
}

TEST(AprioriProperties, EquivalentToBruteForceAndAntiMonotone) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    auto corpus = random_corpus(rng, 1 + rng() % 200);
    double min_support = static_cast<double>(rng() % 60) / 100.0;
    double min_conf = trial % 2 ? 0.0 : static_cast<double>(rng() % 80) / 100.0;
    auto a = sf::apriori(corpus, min_support, min_conf);
    auto b = sf::brute_force_patterns(corpus, min_support, min_conf);
    ASSERT_EQ(a.patterns, b.patterns) << "trial " << trial;

    auto full = sf::brute_force_patterns(corpus, 0.0);
    for (const auto& p : a.patterns)
      for (const auto& q : full.patterns)
        if (p.roles.contains(q.roles)) ASSERT_GE(q.support, p.support);
  }
}

TEST(Coverage, Examples) {
  auto corpus = ten_set_corpus();
  auto all = sf::brute_force_patterns(corpus, 0.0);
  EXPECT_DOUBLE_EQ(sf::pattern_coverage(all, corpus), 1.0);
  EXPECT_DOUBLE_EQ(sf::pattern_coverage(sf::PatternSet{}, corpus), 0.0);

  // {Question} alone has support 0.1, below 0.2.
  auto ps = sf::apriori(corpus, 0.2, 0.1);
  EXPECT_DOUBLE_EQ(sf::pattern_coverage(ps, corpus), 0.9);

  // Utterances without mentions never match.
  corpus.push_back(RoleSet{});
  EXPECT_DOUBLE_EQ(sf::pattern_coverage(all, corpus), 10.0 / 11.0);
}

TEST(Coverage, MonotoneInPatternSet) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto corpus = random_corpus(rng, 50);
    sf::PatternSet ps;
    double last = sf::pattern_coverage(ps, corpus);
    for (unsigned mask = 1; mask < 16; ++mask) {
      if (rng() % 2) continue;
      ps.patterns.push_back({RoleSet(static_cast<std::uint8_t>(mask)), 0, 0, 0});
      double now = sf::pattern_coverage(ps, corpus);
      ASSERT_GE(now, last);
      last = now;
    }
  }
}

TEST(Patterns, JsonRoundTrip) {
  auto ps = sf::apriori(ten_set_corpus());
  auto back = sf::PatternSet::from_json(ps.to_json());
  EXPECT_EQ(back.patterns, ps.patterns);
  EXPECT_EQ(back.corpus_size, ps.corpus_size);
}

TEST(Patterns, TypicalPatternsFoldOptionalArgument) {
  sf::PatternSet ps;
  for (RoleSet s : {RoleSet{Act}, RoleSet{Act, Arg}, RoleSet{Ques, Arg}, RoleSet{Prob, Arg, Ques}})
    ps.patterns.push_back({s, 0.1, 1, 1});
  auto t = sf::typical_patterns(ps);
  std::set<std::string> got(t.begin(), t.end());
  EXPECT_EQ(got, (std::set<std::string>{"Action-(Argument)", "(Argument)-Question", "Problem-(Argument)-Question"}));
}

TEST(RoleSets, ExtractSkipsMentionlessUtterances) {
  auto mk = [](std::string text, std::initializer_list<const char*> tags) {
    sf::AnnotatedUtterance a;
    a.utterance = sf::make_utterance("x", text);
    for (auto t : tags) a.tags.push_back(*sf::BioTag::parse(t));
    return a;
  };
  std::vector<sf::AnnotatedUtterance> data = {
      mk("Check my insurance policy", {"B-Action", "O", "B-Argument", "I-Argument"}),
      mk("I lost my ID card", {"O", "B-Problem", "O", "B-Argument", "I-Argument"}),
      mk("hello there", {"O", "O"}),
  };
  auto r = sf::extract_role_sets(data);
  ASSERT_EQ(r.role_sets.size(), 2u);
  EXPECT_EQ(r.role_sets[0], RoleSet({Act, Arg}));
  EXPECT_EQ(r.role_sets[1], RoleSet({Prob, Arg}));
  EXPECT_EQ(r.skipped, 1u);
}
