#include <gtest/gtest.h>

#include <random>

#include "schema_forge/evaluation.hpp"

namespace sf = schema_forge;

namespace {

sf::TagSequence tags(std::initializer_list<const char*> names) {
  sf::TagSequence out;
  for (auto n : names) out.push_back(*sf::BioTag::parse(n));
  return out;
}

}  // namespace

TEST(TokenPrf, PerfectAndAllO) {
  auto gold = tags({"B-Action", "O", "B-Argument", "I-Argument"});
  auto r = sf::token_prf(gold, gold);
  for (const auto& role : {"Action", "Argument"}) EXPECT_DOUBLE_EQ(r.per_class.at(role).f1, 1.0);
  auto none = sf::token_prf(gold, tags({"O", "O", "O", "O"}));
  EXPECT_DOUBLE_EQ(none.per_class.at("Argument").recall, 0.0);
  EXPECT_DOUBLE_EQ(none.weighted.recall, 0.0);
  EXPECT_THROW(sf::token_prf(gold, tags({"O"})), sf::InvalidArgument);
}

TEST(TokenPrf, TenTokenFixtureWithTwoBoundaryErrors) {
  auto gold = tags({"B-Action", "O", "B-Argument", "I-Argument", "O", "B-Problem", "I-Problem", "O", "B-Question", "O"});
  auto pred = tags({"B-Action", "O", "O", "B-Argument", "O", "B-Problem", "I-Problem", "I-Problem", "B-Question", "O"});
  auto r = sf::token_prf(gold, pred);
  // Argument: tp 1, fn 1. Problem: tp 2, fp 1.
  EXPECT_DOUBLE_EQ(r.per_class.at("Argument").precision, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class.at("Argument").recall, 0.5);
  EXPECT_NEAR(r.per_class.at("Argument").f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.per_class.at("Problem").precision, 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.per_class.at("Problem").recall, 1.0);
  EXPECT_NEAR(r.per_class.at("Problem").f1, 0.8, 1e-12);
  EXPECT_EQ(r.weighted.support, 6u);
  EXPECT_NEAR(r.weighted.f1, (1.0 + 2 * (2.0 / 3.0) + 2 * 0.8 + 1.0) / 6.0, 1e-12);
  EXPECT_NEAR(r.weighted.recall, 5.0 / 6.0, 1e-12);
}

TEST(TokenPrf, WeightedIsSupportWeightedMean) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<sf::TagSequence> g(5), p(5);
    for (int s = 0; s < 5; ++s)
      for (int i = 0; i < 8; ++i) {
        g[s].push_back(sf::BioTag::from_id(rng() % sf::BioTag::kCount));
        p[s].push_back(sf::BioTag::from_id(rng() % sf::BioTag::kCount));
      }
    auto r = sf::token_prf(g, p);
    double num = 0, den = 0;
    for (const auto& [_, c] : r.per_class) {
      num += static_cast<double>(c.support) * c.f1;
      den += static_cast<double>(c.support);
      EXPECT_GE(c.f1, 0.0);
      EXPECT_LE(c.f1, 1.0);
    }
    EXPECT_NEAR(r.weighted.f1, num / den, 1e-12);
  }
}

TEST(IntentMacroF1, ClosedForms) {
  EXPECT_DOUBLE_EQ(sf::intent_macro_f1({"a", "b"}, {"a", "b"}).macro.f1, 1.0);
  // Constant prediction on a balanced 2-class set: F1 2/3 and 0.
  EXPECT_NEAR(sf::intent_macro_f1({"a", "a", "b", "b"}, {"a", "a", "a", "a"}).macro.f1, 1.0 / 3.0, 1e-12);
  EXPECT_THROW(sf::intent_macro_f1({}, {}), sf::InvalidArgument);
}

TEST(IntentMacroF1, ThreeClassHandCount) {
  // A: tp2 fn1 -> 0.8; B: tp1 fp1 fn1 -> 0.5; C: tp1 fp1 -> 2/3.
  auto r = sf::intent_macro_f1({"A", "A", "A", "B", "B", "C"}, {"A", "A", "B", "B", "C", "C"});
  EXPECT_NEAR(r.per_class.at("A").f1, 0.8, 1e-12);
  EXPECT_NEAR(r.per_class.at("B").f1, 0.5, 1e-12);
  EXPECT_NEAR(r.per_class.at("C").f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.macro.f1, (0.8 + 0.5 + 2.0 / 3.0) / 3.0, 1e-12);
}

TEST(SlotPrf, Conventions) {
  std::set<sf::SlotTuple> gold = {{"u1", "Document", "insurance policy"}, {"u2", "Loan", "mortgage"}, {"u3", "Card", "visa"}};
  EXPECT_DOUBLE_EQ(sf::slot_prf(gold, gold).f1, 1.0);
  auto empty = sf::slot_prf(gold, {});
  EXPECT_DOUBLE_EQ(empty.precision, 0.0);
  EXPECT_DOUBLE_EQ(empty.recall, 0.0);
  auto r = sf::slot_prf(gold, {{"u1", "Document", "insurance policy"}, {"u2", "Loan", "tuition loan"}});
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_NEAR(r.recall, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.f1, 0.4, 1e-12);
}

TEST(ClusteringScores, EntropyFixtures) {
  std::vector<int> gold = {0, 0, 1, 1, 2, 2};
  auto same = sf::clustering_scores(gold, std::vector<int>{5, 5, 3, 3, 9, 9});
  EXPECT_EQ(same.homogeneity, 1.0);
  EXPECT_EQ(same.completeness, 1.0);
  EXPECT_EQ(same.v_measure, 1.0);

  auto one = sf::clustering_scores(gold, std::vector<int>(6, 0));
  EXPECT_EQ(one.homogeneity, 0.0);
  EXPECT_EQ(one.completeness, 1.0);

  auto singletons = sf::clustering_scores(gold, std::vector<int>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(singletons.homogeneity, 1.0);
  EXPECT_LT(singletons.completeness, 1.0);
  EXPECT_THROW(sf::clustering_scores(gold, std::vector<int>{1}), sf::InvalidArgument);
}

TEST(ClusteringScores, HarmonicIdentityAndRelabelInvariance) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng() % 60;
    std::vector<int> g(n), p(n), p2(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<int>(rng() % 5);
      p[i] = static_cast<int>(rng() % 6);
      p2[i] = 100 - 7 * p[i];
    }
    auto r = sf::clustering_scores(g, p);
    for (double v : {r.homogeneity, r.completeness, r.v_measure}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    double hm = r.homogeneity + r.completeness > 0 ? 2 * r.homogeneity * r.completeness / (r.homogeneity + r.completeness) : 0;
    ASSERT_NEAR(r.v_measure, hm, 1e-12);
    auto r2 = sf::clustering_scores(g, p2);
    ASSERT_NEAR(r.v_measure, r2.v_measure, 1e-12);
  }
}

TEST(Reports, JsonAndTable) {
  auto r = sf::intent_macro_f1({"Check-(Document)", "Lost-(Card)"}, {"Check-(Document)", "Check-(Document)"});
  auto j = r.to_json();
  EXPECT_TRUE(j.contains("macro"));
  auto table = r.to_table();
  EXPECT_NE(table.find("Check-(Document)"), std::string::npos);
  EXPECT_NE(table.find("weighted"), std::string::npos);
}
