#ifndef SCHEMA_FORGE_PIPELINE_HPP
#define SCHEMA_FORGE_PIPELINE_HPP

// Stage composition: model directory layout, schema induction from a partly
// annotated corpus, mapping of induced concepts onto reference concepts, run
// reports and the stage manifest.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "schema_forge/cnn_encoder.hpp"
#include "schema_forge/concepts.hpp"
#include "schema_forge/embeddings.hpp"
#include "schema_forge/hash.hpp"
#include "schema_forge/inference.hpp"
#include "schema_forge/irl.hpp"
#include "schema_forge/patterns.hpp"

namespace schema_forge {

// ---------------------------------------------------------------------------
// Model directory

namespace artifacts {
inline constexpr const char* kTagger = "tagger.json";
inline constexpr const char* kConcepts = "concepts.json";
inline constexpr const char* kPatterns = "patterns.json";
/// CNN encoder; preferred over the table when both exist.
inline constexpr const char* kEncoder = "encoder.json";
inline constexpr const char* kEmbeddings = "embeddings.bin";
}  // namespace artifacts

struct ModelBundle {
  TaggerModel tagger;
  ConceptRepository repo;
  PatternSet patterns;
  std::shared_ptr<const MentionEmbedder> embed;
};

inline std::shared_ptr<const MentionEmbedder> load_embedder(const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir / artifacts::kEncoder))
    return std::make_shared<SubwordCnnEncoder>(SubwordCnnEncoder::load((dir / artifacts::kEncoder).string()));
  return std::make_shared<EmbeddingTable>(EmbeddingTable::load_binary((dir / artifacts::kEmbeddings).string()));
}

/// Throws MissingFile naming the first absent artifact.
inline ModelBundle load_model_dir(const std::filesystem::path& dir) {
  for (const char* name : {artifacts::kTagger, artifacts::kConcepts, artifacts::kPatterns})
    if (!std::filesystem::exists(dir / name)) throw MissingFile((dir / name).string());
  if (!std::filesystem::exists(dir / artifacts::kEncoder) && !std::filesystem::exists(dir / artifacts::kEmbeddings))
    throw MissingFile((dir / artifacts::kEncoder).string() + " or " + (dir / artifacts::kEmbeddings).string());
  ModelBundle b;
  b.tagger = TaggerModel::load((dir / artifacts::kTagger).string());
  b.repo = ConceptRepository::load((dir / artifacts::kConcepts).string());
  b.patterns = PatternSet::load((dir / artifacts::kPatterns).string());
  b.embed = load_embedder(dir);
  return b;
}

// ---------------------------------------------------------------------------
// Concept mining

struct ClusterConfig {
  ClusterMethod method = ClusterMethod::Lpa;
  std::size_t knn_k = 5;
  LpaConfig lpa;
  /// K-means cluster count, capped at the number of mentions.
  std::size_t kmeans_k = 5;
  std::vector<std::uint64_t> kmeans_seeds = {1, 2, 3, 4, 5};
  std::uint64_t mine_seed = 0;
};

inline ClusterAssignment cluster_vectors(const std::vector<Vector>& vecs, const ClusterConfig& cfg) {
  if (vecs.empty()) return {};
  switch (cfg.method) {
    case ClusterMethod::KMeans:
      return kmeans_best_of(vecs, std::min(cfg.kmeans_k, vecs.size()), cfg.kmeans_seeds).assignment;
    case ClusterMethod::MinE: return mine_cluster(build_knn_graph(vecs, cfg.knn_k), cfg.mine_seed).assignment;
    case ClusterMethod::Lpa: return lpa_cluster(build_knn_graph(vecs, cfg.knn_k), cfg.lpa);
    case ClusterMethod::Given: break;
  }
  throw InvalidArgument("cluster_vectors: method must be kmeans, lpa or mine");
}

inline ClusterMethod parse_cluster_method(std::string_view s) {
  for (auto m : {ClusterMethod::KMeans, ClusterMethod::Lpa, ClusterMethod::MinE})
    if (method_name(m) == s) return m;
  throw InvalidArgument("unknown clustering method '" + std::string(s) + "'");
}

/// Clusters the mentions of each role independently and names the clusters.
/// Mentions the embedder cannot encode become singleton concepts.
inline ConceptRepository mine_concepts(const std::map<std::pair<IntentRole, std::string>, std::size_t>& counts,
                                       const MentionEmbedder& embed, const ClusterConfig& cfg) {
  ConceptRepository repo;
  for (auto role : kAllRoles) {
    std::vector<std::string> names, lone;
    std::vector<std::size_t> freqs;
    std::vector<Vector> vecs;
    for (const auto& [key, n] : counts) {
      if (key.first != role) continue;
      auto v = embed.embed(key.second);
      if (!v || norm2(*v) == 0) {
        lone.push_back(key.second);
        continue;
      }
      names.push_back(key.second);
      freqs.push_back(n);
      vecs.push_back(std::move(*v));
    }
    if (!names.empty()) add_named_clusters(repo, cluster_vectors(vecs, cfg), names, role, freqs);
    for (const auto& m : lone) repo.add_concept(role, m, {m});
  }
  return repo;
}

// ---------------------------------------------------------------------------
// End-to-end induction

struct InductionConfig {
  TaggerConfig tagger;
  CnnConfig cnn;
  ClusterConfig cluster;
  double min_support = 0.05;
  double min_confidence = 0.1;
};

struct InducedSchema {
  TaggerModel tagger;
  std::shared_ptr<SubwordCnnEncoder> encoder;
  ConceptRepository repo;
  PatternSet patterns;
  /// The unlabeled utterances as tagged by the trained tagger.
  std::vector<AnnotatedUtterance> tagged;
  json diagnostics;

  InferenceModel inference_model(const ConInferConfig& cfg = {}) const {
    return InferenceModel(tagger, repo, patterns, encoder.get(), cfg);
  }
};

/// Trains the tagger on `labeled`, tags `unlabeled`, trains the mention
/// encoder on the labeled and tagged streams, mines concepts per role and
/// mines patterns from the tagged role sets.
inline InducedSchema induce_schema(const std::vector<AnnotatedUtterance>& labeled, const std::vector<Utterance>& unlabeled,
                                   const InductionConfig& cfg = {}) {
  InducedSchema out;
  auto trained = train_tagger(labeled, cfg.tagger);
  out.tagger = std::move(trained.model);
  out.tagged.reserve(unlabeled.size());
  for (const auto& u : unlabeled)
    if (!u.tokens.empty()) out.tagged.push_back(tag(out.tagger, u));

  std::vector<AnnotatedUtterance> all = labeled;
  all.insert(all.end(), out.tagged.begin(), out.tagged.end());
  auto streams = mentionize_corpus(all);
  auto cnn = train_cnn_encoder(streams, cfg.cnn);
  out.encoder = std::make_shared<SubwordCnnEncoder>(std::move(cnn.encoder));

  out.repo = mine_concepts(mention_counts(streams), *out.encoder, cfg.cluster);
  auto sets = extract_role_sets(all);
  out.patterns = apriori(sets.role_sets, cfg.min_support, cfg.min_confidence);

  out.diagnostics = {{"tagger_train_accuracy", trained.train_accuracy},
                     {"cnn_heldout_loss", cnn.heldout_loss},
                     {"cnn_warnings", cnn.warnings},
                     {"concepts", out.repo.size()},
                     {"mentions", out.repo.mention_count()},
                     {"patterns", out.patterns.patterns.size()}};
  return out;
}

// ---------------------------------------------------------------------------
// Mapping induced concepts onto reference concepts

/// Reference concept name of each induced concept: the one sharing the most
/// mention occurrences (ties: smallest name). Concepts with no known mention
/// map to nothing.
inline std::map<ConceptId, std::string> map_concepts_by_overlap(
    const ConceptRepository& induced, const std::map<std::pair<IntentRole, std::string>, std::string>& reference,
    const std::map<std::pair<IntentRole, std::string>, std::size_t>& weights = {}) {
  std::map<ConceptId, std::string> out;
  for (const auto& [id, c] : induced.concepts()) {
    std::map<std::string, std::size_t> votes;
    for (const auto& m : c.mentions) {
      auto it = reference.find({c.role, m});
      if (it == reference.end()) continue;
      auto w = weights.find({c.role, m});
      votes[it->second] += w == weights.end() ? 1 : w->second;
    }
    std::size_t best = 0;
    for (const auto& [name, v] : votes)
      if (v > best) {
        best = v;
        out[id] = name;
      }
  }
  return out;
}

/// Rewrites an inference result in reference concept names. Unmapped concepts
/// keep their induced name.
inline IntentSlotResult translate_result(const IntentSlotResult& r, const ConceptRepository& induced,
                                         const std::map<ConceptId, std::string>& mapping) {
  std::vector<InferredMention> ms = r.mentions;
  for (auto& m : ms) {
    if (!m.concept_name) continue;
    auto id = induced.lookup(m.surface, m.role);
    std::optional<ConceptId> cid = id;
    if (!cid)
      for (const auto& c : induced.by_role(m.role))
        if (c->name == *m.concept_name) cid = c->id;
    if (cid) {
      auto it = mapping.find(*cid);
      if (it != mapping.end()) m.concept_name = it->second;
    }
  }
  IntentSlotResult out;
  out.id = r.id;
  out.status = r.status;
  out.mentions = ms;
  for (const auto& m : ms) {
    if (m.concept_name) out.roles[m.role].push_back(*m.concept_name);
    if (m.role == IntentRole::Argument) out.slots[m.concept_name.value_or(kUnknownSlot)].push_back(m.surface);
  }
  for (auto& [_, names] : out.roles) {
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
  }
  out.intent = canonical_intent(out.roles);
  return out;
}

// ---------------------------------------------------------------------------
// Run reports and the stage manifest

/// JSON record written next to every stage artifact.
struct RunReport {
  std::string command;
  json args = json::object();
  std::map<std::string, std::string> inputs;   // path -> content hash
  std::map<std::string, std::string> outputs;  // path -> content hash
  json metrics = json::object();
  std::vector<std::string> warnings;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void input(const std::string& path) { inputs[path] = file_hash(path); }
  void output(const std::string& path) { outputs[path] = file_hash(path); }

  json to_json(const std::string& status = "ok") const {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
    return {{"command", command}, {"status", status},   {"args", args},         {"inputs", inputs},
            {"outputs", outputs}, {"metrics", metrics}, {"warnings", warnings}, {"duration_ms", ms}};
  }

  void save(const std::string& path, const std::string& status = "ok") const {
    std::ofstream out(path);
    if (!out) throw MissingFile(path);
    out << to_json(status).dump(2) << '\n';
  }
};

/// Stage completion markers with the content hashes of their inputs and
/// outputs. A stage may consume a file produced by an earlier stage only while
/// that file still has the hash recorded at production time.
class PipelineManifest {
 public:
  static PipelineManifest load_or_empty(const std::string& path) {
    PipelineManifest m;
    m.path_ = path;
    if (std::filesystem::exists(path)) {
      std::ifstream in(path);
      m.j_ = json::parse(in);
    }
    if (!m.j_.contains("stages")) m.j_["stages"] = json::object();
    return m;
  }

  /// Throws InvalidArgument when a recorded artifact among `inputs` has changed.
  void check_inputs(const std::map<std::string, std::string>& inputs) const {
    for (const auto& [path, hash] : inputs)
      for (const auto& [stage, rec] : j_["stages"].items())
        if (rec["outputs"].contains(path) && rec["outputs"][path] != hash)
          throw InvalidArgument("input " + path + " changed since stage '" + stage + "' produced it");
  }

  void record(const std::string& stage, const RunReport& r) {
    j_["stages"][stage] = {{"inputs", r.inputs}, {"outputs", r.outputs}, {"args", r.args}};
    std::ofstream out(path_);
    if (!out) throw MissingFile(path_);
    out << j_.dump(2) << '\n';
  }

  const json& data() const { return j_; }

 private:
  std::string path_;
  json j_ = json::object();
};

}  // namespace schema_forge

#endif
