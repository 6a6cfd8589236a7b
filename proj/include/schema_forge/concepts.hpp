#ifndef SCHEMA_FORGE_CONCEPTS_HPP
#define SCHEMA_FORGE_CONCEPTS_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "schema_forge/clustering.hpp"
#include "schema_forge/corpus.hpp"
#include "schema_forge/hash.hpp"

namespace schema_forge {

using ConceptId = std::int64_t;

struct Concept {
  ConceptId id = 0;
  IntentRole role = IntentRole::Argument;
  std::string name;
  /// Normalized mention strings, sorted and unique.
  std::vector<std::string> mentions;

  friend bool operator==(const Concept&, const Concept&) = default;
};

/// Mention → concept store. A (mention, role) pair belongs to at most one
/// concept and concepts never mix roles. Ids are never reused.
class ConceptRepository {
 public:
  static constexpr int kFormatVersion = 1;

  const std::map<ConceptId, Concept>& concepts() const { return concepts_; }
  std::size_t size() const { return concepts_.size(); }
  bool empty() const { return concepts_.empty(); }
  ConceptId next_id() const { return next_id_; }

  const Concept* find(ConceptId id) const {
    auto it = concepts_.find(id);
    return it == concepts_.end() ? nullptr : &it->second;
  }

  const Concept& at(ConceptId id) const {
    if (auto* c = find(id)) return *c;
    throw InvalidArgument("unknown concept id " + std::to_string(id));
  }

  std::optional<ConceptId> lookup(std::string_view mention, IntentRole role) const {
    auto it = index_.find({role, normalize_mention(mention)});
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<const Concept*> by_role(IntentRole role) const {
    std::vector<const Concept*> out;
    for (const auto& [_, c] : concepts_)
      if (c.role == role) out.push_back(&c);
    return out;
  }

  /// (mention, concept id) pairs of one role, in concept-id then mention order.
  std::vector<std::pair<std::string, ConceptId>> mentions_of_role(IntentRole role) const {
    std::vector<std::pair<std::string, ConceptId>> out;
    for (const auto& [id, c] : concepts_)
      if (c.role == role)
        for (const auto& m : c.mentions) out.emplace_back(m, id);
    return out;
  }

  std::size_t mention_count() const { return index_.size(); }

  ConceptId add_concept(IntentRole role, std::string name, const std::vector<std::string>& mentions = {}) {
    return add_concept_with_id(next_id_, role, std::move(name), mentions);
  }

  ConceptId add_concept_with_id(ConceptId id, IntentRole role, std::string name,
                                const std::vector<std::string>& mentions = {}) {
    if (name.empty()) throw InvalidArgument("concept name must not be empty");
    if (concepts_.count(id)) throw InvalidArgument("duplicate concept id " + std::to_string(id));
    std::vector<std::string> norm;
    for (const auto& m : mentions) {
      auto key = normalize_mention(m);
      if (key.empty()) throw InvalidArgument("empty mention");
      if (index_.count({role, key}))
        throw InvalidArgument("mention '" + key + "' already assigned within role " + std::string(role_name(role)));
      norm.push_back(std::move(key));
    }
    std::sort(norm.begin(), norm.end());
    if (std::adjacent_find(norm.begin(), norm.end()) != norm.end())
      throw InvalidArgument("duplicate mention within concept '" + name + "'");
    for (const auto& m : norm) index_[{role, m}] = id;
    concepts_[id] = Concept{id, role, std::move(name), std::move(norm)};
    next_id_ = std::max(next_id_, id + 1);
    return id;
  }

  void add_mention(ConceptId id, std::string_view mention) {
    auto& c = mutable_at(id);
    auto key = normalize_mention(mention);
    if (key.empty()) throw InvalidArgument("empty mention");
    if (index_.count({c.role, key}))
      throw InvalidArgument("mention '" + key + "' already assigned within role " + std::string(role_name(c.role)));
    c.mentions.insert(std::lower_bound(c.mentions.begin(), c.mentions.end(), key), key);
    index_[{c.role, key}] = id;
  }

  void remove_mention(ConceptId id, std::string_view mention) {
    auto& c = mutable_at(id);
    auto key = normalize_mention(mention);
    auto it = std::lower_bound(c.mentions.begin(), c.mentions.end(), key);
    if (it == c.mentions.end() || *it != key)
      throw InvalidArgument("mention '" + key + "' is not in concept " + std::to_string(id));
    c.mentions.erase(it);
    index_.erase({c.role, key});
  }

  void rename(ConceptId id, std::string name) {
    if (name.empty()) throw InvalidArgument("concept name must not be empty");
    mutable_at(id).name = std::move(name);
  }

  void remove_concept(ConceptId id) {
    auto& c = mutable_at(id);
    for (const auto& m : c.mentions) index_.erase({c.role, m});
    concepts_.erase(id);
  }

  /// Throws if any structural invariant is broken.
  void check_invariants() const {
    std::size_t total = 0;
    for (const auto& [id, c] : concepts_) {
      if (id != c.id) throw Error("concept key/id mismatch");
      if (c.name.empty()) throw Error("concept " + std::to_string(id) + " has empty name");
      if (id >= next_id_) throw Error("concept id beyond next_id");
      if (!std::is_sorted(c.mentions.begin(), c.mentions.end()) ||
          std::adjacent_find(c.mentions.begin(), c.mentions.end()) != c.mentions.end())
        throw Error("concept " + std::to_string(id) + " mentions not sorted/unique");
      for (const auto& m : c.mentions) {
        auto it = index_.find({c.role, m});
        if (it == index_.end() || it->second != id) throw Error("index out of sync for '" + m + "'");
      }
      total += c.mentions.size();
    }
    if (total != index_.size()) throw Error("index has stale entries");
  }

  json to_json() const {
    json concepts = json::array();
    for (const auto& [id, c] : concepts_)
      concepts.push_back({{"id", id}, {"role", std::string(role_name(c.role))}, {"name", c.name}, {"mentions", c.mentions}});
    return {{"version", kFormatVersion}, {"next_id", next_id_}, {"concepts", concepts}};
  }

  /// Canonical serialization used for hashing and byte comparison.
  std::string canonical() const { return to_json().dump(); }
  std::string content_hash() const { return schema_forge::content_hash(canonical()); }

  static ConceptRepository from_json(const json& j) {
    if (j.value("version", 0) != kFormatVersion) throw ParseError("unsupported concept repository version", 0);
    ConceptRepository repo;
    for (const auto& c : j.at("concepts"))
      repo.add_concept_with_id(c.at("id").get<ConceptId>(), require_role(c.at("role").get<std::string>()),
                               c.at("name").get<std::string>(), c.at("mentions").get<std::vector<std::string>>());
    if (j.contains("next_id")) repo.next_id_ = std::max(repo.next_id_, j["next_id"].get<ConceptId>());
    return repo;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw MissingFile(path);
    out << to_json().dump(2) << '\n';
  }

  static ConceptRepository load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path);
    return from_json(json::parse(in));
  }

  friend bool operator==(const ConceptRepository& a, const ConceptRepository& b) {
    return a.next_id_ == b.next_id_ && a.concepts_ == b.concepts_;
  }

 private:
  Concept& mutable_at(ConceptId id) {
    auto it = concepts_.find(id);
    if (it == concepts_.end()) throw InvalidArgument("unknown concept id " + std::to_string(id));
    return it->second;
  }

  std::map<ConceptId, Concept> concepts_;
  std::map<std::pair<IntentRole, std::string>, ConceptId> index_;
  ConceptId next_id_ = 0;
};

/// Names each cluster after its most frequent mention (ties: lexicographically
/// smallest) and adds the clusters to `repo` as new concepts of `role`.
/// Returns the new concept ids, one per cluster.
inline std::vector<ConceptId> add_named_clusters(ConceptRepository& repo, const ClusterAssignment& assignment,
                                                 const std::vector<std::string>& mentions, IntentRole role,
                                                 const std::vector<std::size_t>& frequencies) {
  if (assignment.labels.size() != mentions.size())
    throw InvalidArgument("name_concepts: assignment covers " + std::to_string(assignment.labels.size()) +
                          " items but " + std::to_string(mentions.size()) + " mentions given");
  if (!frequencies.empty() && frequencies.size() != mentions.size())
    throw InvalidArgument("name_concepts: frequency count mismatch");
  std::vector<ConceptId> ids;
  for (const auto& group : assignment.members()) {
    if (group.empty()) continue;
    std::size_t best = group[0];
    auto freq = [&](std::size_t i) { return frequencies.empty() ? std::size_t{1} : frequencies[i]; };
    for (auto i : group) {
      if (freq(i) > freq(best) || (freq(i) == freq(best) && normalize_mention(mentions[i]) < normalize_mention(mentions[best])))
        best = i;
    }
    std::vector<std::string> ms;
    for (auto i : group) ms.push_back(mentions[i]);
    ids.push_back(repo.add_concept(role, normalize_mention(mentions[best]), ms));
  }
  return ids;
}

inline ConceptRepository name_concepts(const ClusterAssignment& assignment, const std::vector<std::string>& mentions,
                                       IntentRole role, const std::vector<std::size_t>& frequencies) {
  ConceptRepository repo;
  add_named_clusters(repo, assignment, mentions, role, frequencies);
  return repo;
}

inline ConceptRepository name_concepts(const ClusterAssignment& assignment,
                                       const std::vector<std::pair<std::string, IntentRole>>& mentions,
                                       const std::vector<std::size_t>& frequencies) {
  if (mentions.empty()) return {};
  std::vector<std::string> surfaces;
  for (const auto& [m, r] : mentions) {
    if (r != mentions[0].second) throw InvalidArgument("name_concepts: mentions span more than one role");
    surfaces.push_back(m);
  }
  return name_concepts(assignment, surfaces, mentions[0].second, frequencies);
}

}  // namespace schema_forge

#endif
