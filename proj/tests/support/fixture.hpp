#ifndef SCHEMA_FORGE_TEST_FIXTURE_HPP
#define SCHEMA_FORGE_TEST_FIXTURE_HPP

// Small hand-built models: a tagger trained on a dozen banking utterances, a
// concept repository, a 3-d embedding table and a pattern set.

#include <filesystem>

#include "schema_forge/inference.hpp"
#include "schema_forge/pipeline.hpp"

namespace sf_test {

namespace sf = schema_forge;

inline sf::AnnotatedUtterance annotated(std::string id, std::string text, std::initializer_list<const char*> tags) {
  sf::AnnotatedUtterance a;
  a.utterance = sf::make_utterance(std::move(id), text);
  for (auto t : tags) a.tags.push_back(*sf::BioTag::parse(t));
  return a;
}

inline std::vector<sf::AnnotatedUtterance> fixture_training_data() {
  return {
      annotated("f1", "Check my insurance policy", {"B-Action", "O", "B-Argument", "I-Argument"}),
      annotated("f2", "view my medical certificate", {"B-Action", "O", "B-Argument", "I-Argument"}),
      annotated("f3", "check the id card", {"B-Action", "O", "B-Argument", "I-Argument"}),
      annotated("f4", "when will my mortgage arrive", {"B-Question", "O", "O", "B-Argument", "B-Action"}),
      annotated("f5", "when does the student loan arrive", {"B-Question", "O", "O", "B-Argument", "I-Argument", "B-Action"}),
      annotated("f6", "view the mortgage", {"B-Action", "O", "B-Argument"}),
      annotated("f7", "hello there", {"O", "O"}),
      annotated("f8", "thanks a lot", {"O", "O", "O"}),
      annotated("f9", "check my student loan", {"B-Action", "O", "B-Argument", "I-Argument"}),
      annotated("f10", "good morning", {"O", "O"}),
  };
}

inline sf::TaggerModel fixture_tagger() {
  sf::TaggerConfig cfg;
  cfg.epochs = 20;
  return sf::train_tagger(fixture_training_data(), cfg).model;
}

inline sf::ConceptRepository fixture_repo() {
  sf::ConceptRepository repo;
  repo.add_concept(sf::IntentRole::Action, "Check", {"check", "view"});
  repo.add_concept(sf::IntentRole::Action, "Arrival", {"arrive"});
  repo.add_concept(sf::IntentRole::Argument, "Document", {"insurance policy", "medical certificate", "id card"});
  repo.add_concept(sf::IntentRole::Argument, "Loan", {"mortgage", "student loan"});
  repo.add_concept(sf::IntentRole::Question, "Consultant", {"when"});
  return repo;
}

// Axis 0 is documents, axis 1 loans, axis 2 actions.
inline sf::EmbeddingTable fixture_table() {
  sf::EmbeddingTable t(sf::EmbedMethod::W2v, 3);
  t.set("insurance policy", {1.0, 0.1, 0.0});
  t.set("medical certificate", {0.95, 0.05, 0.05});
  t.set("id card", {0.9, 0.2, 0.0});
  t.set("medical report", {0.94, 0.05, 0.05});
  t.set("mortgage", {0.1, 1.0, 0.0});
  t.set("student loan", {0.05, 0.9, 0.1});
  t.set("check", {0.0, 0.0, 1.0});
  t.set("view", {0.1, 0.0, 0.9});
  t.set("arrive", {0.0, 0.3, 0.8});
  return t;
}

inline sf::PatternSet fixture_patterns() {
  using R = sf::IntentRole;
  sf::PatternSet p;
  p.min_support = 0.05;
  p.min_confidence = 0.1;
  p.patterns = {{sf::RoleSet{R::Action, R::Argument}, 0.5, 0.6},
                {sf::RoleSet{R::Action, R::Argument, R::Question}, 0.2, 0.3},
                {sf::RoleSet{R::Problem, R::Argument}, 0.1, 0.2}};
  return p;
}

/// Writes the fixture tagger, concepts, patterns and table as a model directory.
inline std::filesystem::path write_fixture_model_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  fixture_tagger().save((dir / sf::artifacts::kTagger).string());
  fixture_repo().save((dir / sf::artifacts::kConcepts).string());
  fixture_patterns().save((dir / sf::artifacts::kPatterns).string());
  fixture_table().save_binary((dir / sf::artifacts::kEmbeddings).string());
  return dir;
}

}  // namespace sf_test

#endif
