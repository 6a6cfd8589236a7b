#ifndef SCHEMA_FORGE_TEST_RANDOM_OPS_HPP
#define SCHEMA_FORGE_TEST_RANDOM_OPS_HPP

#include <random>

#include "schema_forge/refinement.hpp"

namespace sf_test {

namespace sf = schema_forge;

// A random op whose preconditions hold on `repo`.
inline sf::RefinementOp random_valid_op(const sf::ConceptRepository& repo, std::mt19937_64& rng) {
  auto pick = [&](const auto& v) { return v[rng() % v.size()]; };
  std::vector<const sf::Concept*> all, multi, nonempty, empty;
  for (const auto& [_, c] : repo.concepts()) {
    all.push_back(&c);
    if (c.mentions.size() >= 2) multi.push_back(&c);
    if (!c.mentions.empty()) nonempty.push_back(&c);
    if (c.mentions.empty()) empty.push_back(&c);
  }
  sf::RefinementOp op;
  op.actor = "bot";
  op.timestamp = "2026-01-01T00:00:00.000Z";
  for (;;) {
    switch (rng() % 6) {
      case 0:
        if (all.empty()) continue;
        op.kind = sf::OpKind::Rename;
        op.concept_id = pick(all)->id;
        op.name = "name" + std::to_string(rng() % 1000);
        return op;
      case 1: {
        if (all.empty()) continue;
        const auto* dst = pick(all);
        std::vector<sf::ConceptId> same;
        for (const auto* c : all)
          if (c->role == dst->role && c->id != dst->id) same.push_back(c->id);
        if (same.empty()) continue;
        op.kind = sf::OpKind::Merge;
        op.dst_id = dst->id;
        op.src_ids = {pick(same)};
        return op;
      }
      case 2: {
        if (multi.empty()) continue;
        const auto* c = pick(multi);
        op.kind = sf::OpKind::Split;
        op.concept_id = c->id;
        op.partition.assign(2, {});
        op.partition[0].push_back(c->mentions[0]);
        op.partition[1].push_back(c->mentions[1]);
        for (std::size_t i = 2; i < c->mentions.size(); ++i) op.partition[rng() % 2].push_back(c->mentions[i]);
        return op;
      }
      case 3: {
        if (nonempty.empty()) continue;
        const auto* from = pick(nonempty);
        std::vector<sf::ConceptId> same;
        for (const auto* c : all)
          if (c->role == from->role && c->id != from->id) same.push_back(c->id);
        if (same.empty()) continue;
        op.kind = sf::OpKind::Move;
        op.mention = pick(from->mentions);
        op.role = from->role;
        op.from_id = from->id;
        op.to_id = pick(same);
        return op;
      }
      case 4:
        op.kind = sf::OpKind::Create;
        op.role = sf::kAllRoles[rng() % 4];
        op.name = "new" + std::to_string(rng() % 1000);
        return op;
      default:
        if (empty.empty()) continue;
        op.kind = sf::OpKind::DeleteEmpty;
        op.concept_id = pick(empty)->id;
        return op;
    }
  }
}

inline sf::ConceptRepository random_repo(std::mt19937_64& rng, std::size_t concepts, std::size_t mentions_each) {
  sf::ConceptRepository repo;
  for (std::size_t c = 0; c < concepts; ++c) {
    std::vector<std::string> ms;
    for (std::size_t m = 0; m < mentions_each; ++m) ms.push_back("m" + std::to_string(c) + "_" + std::to_string(m));
    repo.add_concept(sf::kAllRoles[rng() % 4], "c" + std::to_string(c), ms);
  }
  return repo;
}

}  // namespace sf_test

#endif
