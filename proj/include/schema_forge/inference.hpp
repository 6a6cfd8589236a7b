#ifndef SCHEMA_FORGE_INFERENCE_HPP
#define SCHEMA_FORGE_INFERENCE_HPP

// Online intent-slot inference: role tagging, concept assignment by exact match
// or cosine top-K vote, and intent/slot construction by role-set matching.
// Also the incremental expansion of the repository from uncategorized mentions.

#include <algorithm>
#include <chrono>
#include <fstream>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "schema_forge/clustering.hpp"
#include "schema_forge/concepts.hpp"
#include "schema_forge/corpus.hpp"
#include "schema_forge/embeddings.hpp"
#include "schema_forge/intent.hpp"
#include "schema_forge/irl.hpp"
#include "schema_forge/patterns.hpp"

namespace schema_forge {

struct ConInferConfig {
  /// Candidates need cosine strictly above this.
  double delta = 0.2;
  std::size_t k = 5;

  void validate() const {
    if (!(delta >= -1.0 && delta <= 1.0)) throw InvalidArgument("con_infer: delta must lie in [-1, 1]");
    if (k < 1) throw InvalidArgument("con_infer: K must be >= 1");
  }
};

/// Slot key for Argument mentions that no concept claimed.
inline const std::string kUnknownSlot = "UNKNOWN";

namespace detail {

// Similarities are compared on a 1e-12 grid so that rescaling the vectors,
// which perturbs cosines in the last bits, cannot reorder or re-threshold them.
inline double quantize_similarity(double s) { return std::round(s * 1e12) / 1e12; }

}  // namespace detail

struct Neighbor {
  std::string mention;
  ConceptId concept_id = 0;
  double similarity = 0;
};

/// Unit vectors of every repository mention the embedder knows, grouped by
/// role in repository order (concept id, then mention).
class MentionIndex {
 public:
  struct Entry {
    std::string mention;
    ConceptId concept_id;
    Vector unit;
  };

  MentionIndex() = default;
  MentionIndex(const ConceptRepository& repo, const MentionEmbedder& embed) {
    for (auto role : kAllRoles)
      for (auto& [m, id] : repo.mentions_of_role(role)) {
        auto v = embed.embed(m);
        if (!v || norm2(*v) == 0) continue;
        by_role_[role_index(role)].push_back(Entry{m, id, normalized(*v)});
      }
  }

  const std::vector<Entry>& entries(IntentRole role) const { return by_role_[role_index(role)]; }

  /// Same-role mentions sorted by decreasing cosine, ties in repository order.
  /// With `above`, only similarities strictly greater are kept.
  std::vector<Neighbor> nearest(std::span<const double> query, IntentRole role, std::size_t k,
                                std::optional<double> above = std::nullopt) const {
    std::vector<Neighbor> out;
    const double qn = norm2(query);
    if (qn == 0) return out;
    for (const auto& e : entries(role)) {
      double s = 0;
      for (std::size_t i = 0; i < e.unit.size(); ++i) s += e.unit[i] * query[i];
      s = detail::quantize_similarity(s / qn);
      if (above && !(s > *above)) continue;
      out.push_back({e.mention, e.concept_id, s});
    }
    std::stable_sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) { return a.similarity > b.similarity; });
    if (out.size() > k) out.resize(k);
    return out;
  }

 private:
  std::array<std::vector<Entry>, 4> by_role_;
};

/// Mentions that no concept claimed, kept once per (mention, role). Appends are
/// serialized; readers take a copy.
class UncategorizedPool {
 public:
  struct Entry {
    std::string mention;
    IntentRole role = IntentRole::Argument;
    std::optional<Vector> embedding;
    std::size_t occurrences = 0;
    std::int64_t first_seen_ms = 0;
    std::int64_t last_seen_ms = 0;
  };

  UncategorizedPool() = default;
  UncategorizedPool(const UncategorizedPool& o) : entries_(o.snapshot()) {}
  UncategorizedPool& operator=(const UncategorizedPool& o) {
    if (this != &o) {
      auto copy = o.snapshot();
      std::lock_guard lock(mu_);
      entries_ = std::move(copy);
    }
    return *this;
  }

  /// Returns true when the (mention, role) pair is new to the pool.
  bool add(std::string_view mention, IntentRole role, std::optional<Vector> embedding = std::nullopt) {
    const auto key = normalize_mention(mention);
    if (key.empty()) throw InvalidArgument("uncategorized pool: empty mention");
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    std::lock_guard lock(mu_);
    for (auto& e : entries_)
      if (e.role == role && e.mention == key) {
        ++e.occurrences;
        e.last_seen_ms = now;
        if (!e.embedding) e.embedding = std::move(embedding);
        return false;
      }
    entries_.push_back({key, role, std::move(embedding), 1, now, now});
    return true;
  }

  std::vector<Entry> snapshot() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  bool empty() const { return size() == 0; }

  void clear() {
    std::lock_guard lock(mu_);
    entries_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::vector<Entry> entries_;
};

struct MentionRole {
  std::string mention;
  IntentRole role = IntentRole::Argument;
};

/// Concept for one mention: exact repository match first, then a majority vote
/// over the top-K same-role neighbors above delta. A vote tie goes to the tied
/// concept whose best neighbor ranks highest. nullopt means uncategorized.
inline std::optional<ConceptId> con_infer_one(const MentionRole& p, const ConceptRepository& repo,
                                              const MentionIndex& index, const MentionEmbedder* embed,
                                              const ConInferConfig& cfg, UncategorizedPool* pool = nullptr) {
  if (auto id = repo.lookup(p.mention, p.role)) return id;
  std::optional<Vector> q;
  if (embed && !normalize_mention(p.mention).empty()) q = embed->embed(p.mention);
  std::vector<Neighbor> top;
  if (q) top = index.nearest(*q, p.role, cfg.k, cfg.delta);
  if (top.empty()) {
    if (pool && !normalize_mention(p.mention).empty()) pool->add(p.mention, p.role, q);
    return std::nullopt;
  }
  std::map<ConceptId, std::size_t> votes;
  for (const auto& n : top) ++votes[n.concept_id];
  std::size_t best = 0;
  for (const auto& [_, v] : votes) best = std::max(best, v);
  for (const auto& n : top)
    if (votes[n.concept_id] == best) return n.concept_id;
  return std::nullopt;
}

inline std::vector<std::optional<ConceptId>> con_infer(const std::vector<MentionRole>& pairs, const ConceptRepository& repo,
                                                       const MentionIndex& index, const MentionEmbedder* embed,
                                                       const ConInferConfig& cfg = {}, UncategorizedPool* pool = nullptr) {
  cfg.validate();
  std::vector<std::optional<ConceptId>> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(con_infer_one(p, repo, index, embed, cfg, pool));
  return out;
}

/// One-shot form that indexes the repository on every call.
inline std::vector<std::optional<ConceptId>> con_infer(const std::vector<MentionRole>& pairs, const ConceptRepository& repo,
                                                       const MentionEmbedder& embed, const ConInferConfig& cfg = {},
                                                       UncategorizedPool* pool = nullptr) {
  return con_infer(pairs, repo, MentionIndex(repo, embed), &embed, cfg, pool);
}

// ---------------------------------------------------------------------------
// Intent-slot construction

enum class InferStatus { Ok, OutOfPattern, NoMentions };

inline std::string_view status_name(InferStatus s) {
  switch (s) {
    case InferStatus::Ok: return "OK";
    case InferStatus::OutOfPattern: return "OUT_OF_PATTERN";
    case InferStatus::NoMentions: return "NO_MENTIONS";
  }
  return "?";
}

struct InferredMention {
  std::string surface;
  IntentRole role = IntentRole::Argument;
  std::size_t start = 0;
  std::size_t end = 0;
  /// Concept name, nullopt when uncategorized.
  std::optional<std::string> concept_name;
};

struct IntentSlotResult {
  std::string id;
  std::string intent;
  InferStatus status = InferStatus::NoMentions;
  /// Categorized concept names per role; `intent` is canonical_intent(roles).
  RoleConcepts roles;
  /// Argument concept name (or UNKNOWN) to mention surfaces, in utterance order.
  std::map<std::string, std::vector<std::string>> slots;
  std::vector<InferredMention> mentions;

  json to_json() const {
    json r = json::object();
    for (const auto& [role, names] : roles) r[std::string(role_name(role))] = names;
    json ms = json::array();
    for (const auto& m : mentions)
      ms.push_back({{"surface", m.surface},
                    {"role", std::string(role_name(m.role))},
                    {"span", {m.start, m.end}},
                    {"concept", m.concept_name ? json(*m.concept_name) : json(nullptr)}});
    return {{"id", id}, {"intent", intent}, {"status", std::string(status_name(status))},
            {"roles", r}, {"slots", slots}, {"mentions", ms}};
  }

  static IntentSlotResult from_json(const json& j) {
    IntentSlotResult r;
    r.id = j.at("id").get<std::string>();
    r.intent = j.at("intent").get<std::string>();
    auto st = j.value("status", std::string("OK"));
    bool known = false;
    for (auto s : {InferStatus::Ok, InferStatus::OutOfPattern, InferStatus::NoMentions})
      if (status_name(s) == st) {
        r.status = s;
        known = true;
      }
    if (!known) throw InvalidArgument("unknown inference status '" + st + "'");
    if (j.contains("roles"))
      for (const auto& [k, v] : j["roles"].items()) r.roles[require_role(k)] = v.get<std::vector<std::string>>();
    if (j.contains("slots")) r.slots = j["slots"].get<std::map<std::string, std::vector<std::string>>>();
    if (j.contains("mentions"))
      for (const auto& m : j["mentions"]) {
        InferredMention im{m.at("surface").get<std::string>(), require_role(m.at("role").get<std::string>()),
                           m.at("span").at(0).get<std::size_t>(), m.at("span").at(1).get<std::size_t>(), std::nullopt};
        if (m.contains("concept") && !m["concept"].is_null()) im.concept_name = m["concept"].get<std::string>();
        r.mentions.push_back(std::move(im));
      }
    return r;
  }
};

/// Builds the intent string and slots from categorized mentions. The role set of
/// all mentions, categorized or not, must equal a mined pattern for status OK.
/// Uncategorized Argument mentions land in the UNKNOWN slot; other uncategorized
/// mentions contribute nothing to the intent string.
inline IntentSlotResult is_infer(const std::vector<InferredMention>& mentions, const PatternSet& patterns) {
  IntentSlotResult r;
  r.mentions = mentions;
  if (mentions.empty()) {
    r.status = InferStatus::NoMentions;
    return r;
  }
  RoleSet set;
  for (const auto& m : mentions) {
    set.insert(m.role);
    if (m.concept_name) r.roles[m.role].push_back(*m.concept_name);
    if (m.role == IntentRole::Argument) r.slots[m.concept_name.value_or(kUnknownSlot)].push_back(m.surface);
  }
  for (auto& [_, names] : r.roles) {
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
  }
  r.intent = canonical_intent(r.roles);
  r.status = patterns.contains(set) ? InferStatus::Ok : InferStatus::OutOfPattern;
  return r;
}

// ---------------------------------------------------------------------------
// Full pipeline

/// Immutable bundle of everything one inference needs. The embedder must
/// outlive the bundle.
struct InferenceModel {
  TaggerModel tagger;
  ConceptRepository repo;
  PatternSet patterns;
  const MentionEmbedder* embed = nullptr;
  MentionIndex index;
  ConInferConfig cfg;

  InferenceModel(TaggerModel t, ConceptRepository r, PatternSet p, const MentionEmbedder* e, ConInferConfig c = {})
      : tagger(std::move(t)), repo(std::move(r)), patterns(std::move(p)), embed(e), cfg(c) {
    cfg.validate();
    if (embed) index = MentionIndex(repo, *embed);
  }
};

/// Infers from already-decoded mentions.
inline IntentSlotResult infer_mentions(const std::string& id, const std::vector<Mention>& mentions,
                                       const InferenceModel& m, UncategorizedPool* pool = nullptr) {
  std::vector<InferredMention> ims;
  for (const auto& mm : mentions) {
    auto cid = con_infer_one({mm.surface, mm.role}, m.repo, m.index, m.embed, m.cfg, pool);
    ims.push_back({mm.surface, mm.role, mm.start, mm.end,
                   cid ? std::optional<std::string>(m.repo.at(*cid).name) : std::nullopt});
  }
  auto r = is_infer(ims, m.patterns);
  r.id = id;
  return r;
}

inline IntentSlotResult infer(const Utterance& u, const InferenceModel& m, UncategorizedPool* pool = nullptr) {
  auto tagged = tag(m.tagger, u);
  return infer_mentions(u.id, decode_bio(tagged.tags, u), m, pool);
}

/// Nearest repository mentions of `role` to `mention`, by cosine.
inline std::vector<Neighbor> neighbors(const MentionIndex& index, const MentionEmbedder& embed, std::string_view mention,
                                       IntentRole role, std::size_t k) {
  if (normalize_mention(mention).empty()) throw InvalidArgument("neighbors: empty mention");
  auto q = embed.embed(mention);
  if (!q) return {};
  return index.nearest(*q, role, k);
}

// ---------------------------------------------------------------------------
// Concept expansion

/// Pool entries as JSONL {mention, role, occurrences}. Embeddings and
/// timestamps are not written, so identical inputs give identical files.
inline void write_pool_jsonl(std::ostream& out, const std::vector<UncategorizedPool::Entry>& entries) {
  for (const auto& e : entries)
    out << json{{"mention", e.mention}, {"role", std::string(role_name(e.role))}, {"occurrences", e.occurrences}}.dump()
        << '\n';
}

inline std::vector<UncategorizedPool::Entry> read_pool_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  std::vector<UncategorizedPool::Entry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      UncategorizedPool::Entry e;
      e.mention = normalize_mention(j.at("mention").get<std::string>());
      e.role = require_role(j.at("role").get<std::string>());
      e.occurrences = j.value("occurrences", std::size_t{1});
      if (e.mention.empty()) throw InvalidArgument("empty mention");
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(std::string("bad pool record: ") + ex.what(), lineno);
    } catch (const InvalidArgument& ex) {
      throw ParseError(std::string("bad pool record: ") + ex.what(), lineno);
    }
  }
  return out;
}

struct ExpandConfig {
  ClusterMethod method = ClusterMethod::Lpa;
  /// Neighbors per node for the graph-based methods.
  std::size_t knn_k = 5;
  /// Cluster count for K-means, capped at the number of pool mentions.
  std::size_t kmeans_k = 2;
  std::uint64_t seed = 0;
};

/// Clusters the pool per role and appends each cluster as a new concept with a
/// fresh id. Existing concepts are untouched. Pool mentions that the repository
/// already holds are skipped; mentions without an embedding become singletons.
inline ConceptRepository expand_concepts(const std::vector<UncategorizedPool::Entry>& pool, const ConceptRepository& repo,
                                         const MentionEmbedder* embed, const ExpandConfig& cfg = {}) {
  if (pool.empty()) throw InvalidArgument("expand_concepts: empty pool");
  ConceptRepository out = repo;
  for (auto role : kAllRoles) {
    std::vector<std::string> names;
    std::vector<std::size_t> freqs;
    std::vector<Vector> vecs;
    std::vector<std::string> lone;
    std::vector<std::size_t> lone_freqs;
    for (const auto& e : pool) {
      if (e.role != role || out.lookup(e.mention, role)) continue;
      auto v = e.embedding;
      if (!v && embed) v = embed->embed(e.mention);
      if (!v || norm2(*v) == 0) {
        lone.push_back(e.mention);
        lone_freqs.push_back(std::max<std::size_t>(1, e.occurrences));
        continue;
      }
      names.push_back(e.mention);
      freqs.push_back(std::max<std::size_t>(1, e.occurrences));
      vecs.push_back(std::move(*v));
    }
    if (!names.empty()) {
      ClusterAssignment a;
      switch (cfg.method) {
        case ClusterMethod::KMeans: {
          std::vector<std::uint64_t> seeds = {cfg.seed};
          a = kmeans_best_of(vecs, std::min(cfg.kmeans_k, vecs.size()), seeds).assignment;
          break;
        }
        case ClusterMethod::MinE:
          a = mine_cluster(build_knn_graph(vecs, cfg.knn_k), cfg.seed).assignment;
          break;
        default:
          a = lpa_cluster(build_knn_graph(vecs, cfg.knn_k));
          break;
      }
      add_named_clusters(out, a, names, role, freqs);
    }
    for (std::size_t i = 0; i < lone.size(); ++i) out.add_concept(role, lone[i], {lone[i]});
  }
  return out;
}

inline ConceptRepository expand_concepts(const UncategorizedPool& pool, const ConceptRepository& repo,
                                         const MentionEmbedder* embed, const ExpandConfig& cfg = {}) {
  return expand_concepts(pool.snapshot(), repo, embed, cfg);
}

}  // namespace schema_forge

#endif
