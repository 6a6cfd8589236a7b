#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "schema_forge/irl.hpp"
#include "schema_forge/synth.hpp"

namespace sf = schema_forge;
using nlohmann::json;
using sf::BioTag;
using sf::IntentRole;

namespace {

sf::AnnotatedUtterance annotated(std::string text, std::initializer_list<const char*> tags) {
  sf::AnnotatedUtterance a;
  a.utterance = sf::make_utterance("u", text);
  for (auto t : tags) a.tags.push_back(*BioTag::parse(t));
  return a;
}

double token_accuracy(const sf::TaggerModel& m, const std::vector<sf::AnnotatedUtterance>& data) {
  std::size_t ok = 0, total = 0;
  for (const auto& a : data) {
    auto pred = m.predict(a.utterance.tokens);
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == a.tags[i];
    total += pred.size();
  }
  return static_cast<double>(ok) / static_cast<double>(total);
}

// A model whose weights are random over the features of the given tokens.
sf::TaggerModel random_model(std::mt19937_64& rng, const std::vector<std::vector<std::string>>& sentences) {
  std::normal_distribution<double> g(0.0, 1.0);
  sf::TaggerModel base;
  json j = base.to_json();
  for (auto& row : j["transitions"])
    for (auto& v : row)
      if (!v.is_null()) v = g(rng);
  for (auto& v : j["start"])
    if (!v.is_null()) v = g(rng);
  for (const auto& toks : sentences)
    for (std::size_t i = 0; i < toks.size(); ++i)
      for (const auto& f : base.features(toks, i)) {
        sf::TagScores w;
        for (auto& x : w) x = g(rng);
        j["features"][f] = w;
      }
  return sf::TaggerModel::from_json(j);
}

}  // namespace

TEST(Tagger, SingleExampleReproducedAfterOneEpoch) {
  auto a = annotated("Check my insurance policy", {"B-Action", "O", "B-Argument", "I-Argument"});
  sf::TaggerConfig cfg;
  cfg.epochs = 1;
  auto t = sf::train_tagger({a}, cfg);
  EXPECT_EQ(t.model.predict(a.utterance.tokens), a.tags);
  EXPECT_DOUBLE_EQ(t.train_accuracy, 1.0);
}

TEST(Tagger, EmptyTrainingDataThrows) { EXPECT_THROW(sf::train_tagger({}), sf::InvalidArgument); }

TEST(Tagger, LengthMismatchNamesUtterance) {
  auto a = annotated("Check my policy", {"B-Action", "O"});
  a.utterance.id = "bad-7";
  try {
    sf::train_tagger({a});
    FAIL();
  } catch (const sf::InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("bad-7"), std::string::npos);
  }
}

TEST(Tagger, UntrainedModelPicksLowestTagAndStaysValid) {
  sf::TaggerModel m;
  auto tags = m.predict({"a", "b", "c"});
  ASSERT_EQ(tags.size(), 3u);
  for (auto t : tags) EXPECT_EQ(t, BioTag::begin(IntentRole::Action));
  EXPECT_TRUE(sf::is_bio_valid(tags));
}

TEST(Tagger, EmptyUtteranceRejected) {
  sf::TaggerModel m;
  sf::Utterance u;
  u.id = "e";
  EXPECT_THROW(sf::tag(m, u), sf::InvalidArgument);
}

TEST(Tagger, SeparableDataFitsPerfectly) {
  std::vector<sf::AnnotatedUtterance> data = {
      annotated("check my policy", {"B-Action", "O", "B-Argument"}),
      annotated("lost my card", {"B-Problem", "O", "B-Argument"}),
      annotated("when is the payment due", {"B-Question", "O", "O", "B-Argument", "O"}),
      annotated("cancel the home loan", {"B-Action", "O", "B-Argument", "I-Argument"}),
  };
  sf::TaggerConfig cfg;
  cfg.epochs = 20;
  auto t = sf::train_tagger(data, cfg);
  EXPECT_DOUBLE_EQ(t.train_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(token_accuracy(t.model, data), 1.0);
}

TEST(Tagger, HeldOutAccuracyOnSyntheticCorpus) {
  auto spec = sf::SchemaSpec::finance_default();
  spec.seed = 3;
  auto corpus = sf::generate(spec, 400).annotated();
  std::vector<sf::AnnotatedUtterance> train(corpus.begin(), corpus.begin() + 200);
  std::vector<sf::AnnotatedUtterance> test(corpus.begin() + 200, corpus.end());
  auto t = sf::train_tagger(train);
  EXPECT_GE(token_accuracy(t.model, test), 0.95);
}

TEST(Tagger, TrainingIsDeterministicAndSerializable) {
  auto spec = sf::SchemaSpec::finance_default();
  auto data = sf::generate(spec, 60).annotated();
  sf::TaggerConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  auto a = sf::train_tagger(data, cfg).model.to_json().dump();
  auto b = sf::train_tagger(data, cfg).model.to_json().dump();
  EXPECT_EQ(a, b);
  auto back = sf::TaggerModel::from_json(json::parse(a));
  EXPECT_EQ(back.to_json().dump(), a);
}

TEST(Tagger, ViterbiMatchesExhaustiveSearch) {
  std::mt19937_64 rng(21);
  const std::vector<std::string> vocab = {"check", "my", "policy", "lost", "when", "card", "due", "the"};
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::string> toks(1 + rng() % 4);
    for (auto& t : toks) t = vocab[rng() % vocab.size()];
    auto m = random_model(rng, {toks});
    auto best = m.predict(toks);
    ASSERT_TRUE(sf::is_bio_valid(best));
    double best_score = m.path_score(toks, best);

    // Enumerate all 9^n tag paths; invalid ones score -inf.
    double oracle = sf::kNegInf;
    std::size_t n = toks.size(), total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= BioTag::kCount;
    for (std::size_t code = 0; code < total; ++code) {
      sf::TagSequence path;
      for (std::size_t i = 0, c = code; i < n; ++i, c /= BioTag::kCount) path.push_back(BioTag::from_id(c % BioTag::kCount));
      if (!sf::is_bio_valid(path)) {
        ASSERT_EQ(m.path_score(toks, path), sf::kNegInf);
        continue;
      }
      oracle = std::max(oracle, m.path_score(toks, path));
    }
    EXPECT_NEAR(best_score, oracle, 1e-9);
  }
}

TEST(Tagger, RandomModelsAlwaysDecodeValidBio) {
  std::mt19937_64 rng(4);
  const std::vector<std::string> vocab = {"a", "b", "card", "Loan", "?", "42", "not"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> toks(1 + rng() % 12);
    for (auto& t : toks) t = vocab[rng() % vocab.size()];
    auto m = random_model(rng, {toks});
    ASSERT_TRUE(sf::is_bio_valid(m.predict(toks)));
  }
}

TEST(Tagger, SaveLoadRoundTrip) {
  auto spec = sf::SchemaSpec::finance_default();
  auto data = sf::generate(spec, 40).annotated();
  auto m = sf::train_tagger(data).model;
  auto path = (std::filesystem::temp_directory_path() / "sf_tagger_roundtrip.json").string();
  m.save(path);
  auto back = sf::TaggerModel::load(path);
  for (const auto& a : data) EXPECT_EQ(back.predict(a.utterance.tokens), m.predict(a.utterance.tokens));
  std::filesystem::remove(path);
  EXPECT_THROW(sf::TaggerModel::load(path), sf::MissingFile);
}

TEST(PosRules, ActionArgumentAndNegatedProblem) {
  sf::PosTaggedUtterance p{sf::make_utterance("p1", "check my insurance policy"),
                           {"VB", "PRP$", "NN", "NN"},
                           sf::default_negation_lexicon(),
                           sf::default_interrogative_lexicon()};
  auto a = sf::pos_rule_tag(p);
  auto m = sf::mentions_of(a);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].role, IntentRole::Action);
  EXPECT_EQ(m[1].role, IntentRole::Argument);
  EXPECT_EQ(m[1].surface, "insurance policy");

  sf::PosTaggedUtterance q{sf::make_utterance("p2", "I cannot open my account"),
                           {"PRP", "MD", "VB", "PRP$", "NN"},
                           sf::default_negation_lexicon(),
                           sf::default_interrogative_lexicon()};
  auto mq = sf::mentions_of(sf::pos_rule_tag(q));
  ASSERT_EQ(mq.size(), 2u);
  EXPECT_EQ(mq[0].role, IntentRole::Problem);
  EXPECT_EQ(mq[0].surface, "cannot open");

  sf::PosTaggedUtterance w{sf::make_utterance("p3", "when is it due"),
                           {"WRB", "VBZ", "PRP", "JJ"},
                           sf::default_negation_lexicon(),
                           sf::default_interrogative_lexicon()};
  auto mw = sf::mentions_of(sf::pos_rule_tag(w));
  ASSERT_GE(mw.size(), 1u);
  EXPECT_EQ(mw[0].role, IntentRole::Question);
}

TEST(PosRules, LengthMismatchThrows) {
  sf::PosTaggedUtterance p{sf::make_utterance("p", "a b"), {"NN"}, {}, {}};
  EXPECT_THROW(sf::pos_rule_tag(p), sf::InvalidArgument);
}

TEST(ImportTags, ValidInvalidAndEmpty) {
  std::istringstream ok("Check\tB-Action\nmy\tO\npolicy\tB-Argument\n");
  auto v = sf::import_tags(ok);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].provenance, sf::Provenance::External);

  std::istringstream bad("Check\tB-Action\nmy\tB-Bogus\n");
  try {
    sf::import_tags(bad);
    FAIL();
  } catch (const sf::ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("B-Bogus"), std::string::npos);
  }

  std::istringstream empty("");
  EXPECT_TRUE(sf::import_tags(empty).empty());
}

TEST(PosRules, NegatedVerbIsProblemAndPunctuationIsOutside) {
  sf::PosTaggedUtterance p{sf::make_utterance("p4", "not solved"), {"RB", "VBN"}, sf::default_negation_lexicon(),
                           sf::default_interrogative_lexicon()};
  auto m = sf::mentions_of(sf::pos_rule_tag(p));
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].role, IntentRole::Problem);

  sf::PosTaggedUtterance q{sf::make_utterance("p5", "? !"), {".", "."}, sf::default_negation_lexicon(),
                           sf::default_interrogative_lexicon()};
  for (auto t : sf::pos_rule_tag(q).tags) EXPECT_TRUE(t.is_outside());
}
