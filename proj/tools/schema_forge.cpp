// Batch driver: one pipeline stage per subcommand. Every stage writes its
// artifact plus a JSON run report (<artifact>.report.json unless --report is
// given). Exit codes: 0 ok, 1 internal error, 2 missing input, 3 invalid
// configuration or malformed input, 4 input changed since the manifest
// recorded it. Failures print {"error": {code, message[, path]}} on stderr.

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "schema_forge/cnn_encoder.hpp"
#include "schema_forge/evaluation.hpp"
#include "schema_forge/pipeline.hpp"
#include "schema_forge/service.hpp"
#include "schema_forge/synth.hpp"

namespace sf = schema_forge;
using sf::json;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitMissing = 2;
constexpr int kExitInvalid = 3;
constexpr int kExitStale = 4;

class StaleInput : public sf::Error {
 public:
  using sf::Error::Error;
};

/// Options shared by every stage.
struct Common {
  std::string report;
  std::string manifest;
  int threads = 1;
};

/// SCHEMA_FORGE_SEED, when set, replaces every seed flag.
std::uint64_t resolve_seed(std::uint64_t flag) {
  const char* env = std::getenv("SCHEMA_FORGE_SEED");
  if (!env || !*env) return flag;
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(env, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != std::string(env).size()) throw sf::InvalidArgument("SCHEMA_FORGE_SEED must be an unsigned integer");
  return v;
}

/// Run-report and manifest bookkeeping around one stage.
class Stage {
 public:
  Stage(std::string name, const Common& common) : common_(common) {
    if (common.threads < 1) throw sf::InvalidArgument("--threads must be >= 1");
    report_.command = std::move(name);
    report_.args["threads"] = common.threads;
  }

  sf::RunReport& report() { return report_; }
  json& args() { return report_.args; }
  json& metrics() { return report_.metrics; }

  void input(const std::string& path) {
    if (!std::filesystem::exists(path)) throw sf::MissingFile(path);
    if (std::filesystem::is_directory(path)) return;
    report_.input(path);
  }

  /// Checks recorded inputs against the manifest; call after all input().
  void check_manifest() const {
    if (common_.manifest.empty()) return;
    try {
      sf::PipelineManifest::load_or_empty(common_.manifest).check_inputs(report_.inputs);
    } catch (const sf::InvalidArgument& e) {
      throw StaleInput(e.what());
    }
  }

  /// Report path used when --report is absent, in place of <first output>.report.json.
  void default_report(const std::string& path) {
    if (report_path_.empty()) report_path_ = common_.report.empty() ? path : common_.report;
  }

  void output(const std::string& path) {
    report_.output(path);
    if (report_path_.empty()) report_path_ = common_.report.empty() ? path + ".report.json" : common_.report;
  }

  void finish() {
    if (report_path_.empty() && !common_.report.empty()) report_path_ = common_.report;
    if (!report_path_.empty()) report_.save(report_path_);
    if (!common_.manifest.empty()) {
      auto m = sf::PipelineManifest::load_or_empty(common_.manifest);
      m.record(report_.command, report_);
    }
  }

  void fail(const std::string& message) noexcept {
    try {
      auto path = report_path_.empty() ? common_.report : report_path_;
      if (path.empty()) return;
      report_.warnings.push_back(message);
      report_.save(path, "error");
    } catch (...) {
    }
  }

 private:
  const Common& common_;
  sf::RunReport report_;
  std::string report_path_;
};

Stage* g_stage = nullptr;

std::ofstream open_out(const std::string& path) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw sf::MissingFile(path);
  return out;
}

void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sf::MissingFile(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw sf::ParseError(path + ": " + e.what(), 0);
  }
}

std::vector<sf::AnnotatedUtterance> read_tagged(const std::vector<std::string>& paths, Stage& stage) {
  std::vector<sf::AnnotatedUtterance> all;
  for (const auto& p : paths) {
    auto r = sf::parse_bio(p);
    for (auto& w : r.warnings) stage.report().warnings.push_back(p + ": " + w);
    if (r.repaired) stage.report().warnings.push_back(p + ": " + std::to_string(r.repaired) + " tag sequences repaired");
    all.insert(all.end(), r.utterances.begin(), r.utterances.end());
  }
  return all;
}

/// Loads an encoder (JSON) or an embedding table (binary), by file content.
std::shared_ptr<const sf::MentionEmbedder> read_embedder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sf::MissingFile(path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::string(magic, 4) == "SFEB")
    return std::make_shared<sf::EmbeddingTable>(sf::EmbeddingTable::load_binary(path));
  return std::make_shared<sf::SubwordCnnEncoder>(sf::SubwordCnnEncoder::load(path));
}

// ---------------------------------------------------------------------------
// Stages

struct SynthOpts {
  std::string out_dir, schema;
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  std::optional<double> no_mention_rate, noise_rate, argument_absent_rate, cue_rate;
};

void run_synth(const SynthOpts& o, Stage& st) {
  auto spec = sf::SchemaSpec::finance_default();
  if (!o.schema.empty()) {
    st.input(o.schema);
    st.check_manifest();
    spec = sf::SchemaSpec::from_json(read_json(o.schema));
  }
  spec.seed = resolve_seed(o.seed);
  if (o.no_mention_rate) spec.no_mention_rate = *o.no_mention_rate;
  if (o.noise_rate) spec.noise_rate = *o.noise_rate;
  if (o.argument_absent_rate) spec.argument_absent_rate = *o.argument_absent_rate;
  if (o.cue_rate) spec.cue_rate = *o.cue_rate;
  spec.validate();
  if (o.n == 0) throw sf::InvalidArgument("--n must be > 0");
  st.args().update({{"n", o.n}, {"schema", spec.to_json()}});

  auto corpus = sf::generate(spec, o.n);
  sf::SynthFiles names;
  st.default_report((std::filesystem::path(o.out_dir) / "synth.report.json").string());
  sf::write_synth(o.out_dir, spec, corpus, names);
  write_json((std::filesystem::path(o.out_dir) / "schema.json").string(), spec.to_json());
  for (const auto& f : {names.corpus, names.gold_tags, names.gold_concepts, names.gold_intents, std::string("schema.json")})
    st.output((std::filesystem::path(o.out_dir) / f).string());
  json families = json::object();
  for (std::size_t i = 0; i < sf::kPatternFamilies.size(); ++i)
    families[std::string(sf::family_name(sf::kPatternFamilies[i]))] = corpus.family_counts[i];
  st.metrics() = {{"utterances", corpus.items.size()}, {"families", families}, {"chitchat", corpus.chitchat_count}};
}

struct TrainIrlOpts {
  std::vector<std::string> train;
  std::string dev, out;
  int epochs = 10, window = 2, max_affix = 3;
  std::uint64_t seed = 0;
  bool no_averaging = false;
};

void run_train_irl(const TrainIrlOpts& o, Stage& st) {
  for (const auto& p : o.train) st.input(p);
  if (!o.dev.empty()) st.input(o.dev);
  st.check_manifest();
  sf::TaggerConfig cfg;
  cfg.epochs = o.epochs;
  cfg.window = o.window;
  cfg.max_affix = o.max_affix;
  cfg.seed = resolve_seed(o.seed);
  cfg.averaging = !o.no_averaging;
  cfg.validate();
  st.args().update({{"epochs", cfg.epochs}, {"window", cfg.window}, {"max_affix", cfg.max_affix}, {"seed", cfg.seed},
                    {"averaging", cfg.averaging}});

  auto data = read_tagged(o.train, st);
  if (data.empty()) throw sf::InvalidArgument("train-irl: no training utterances");
  auto trained = sf::train_tagger(data, cfg);
  trained.model.save(o.out);
  st.output(o.out);
  st.metrics() = {{"train_utterances", data.size()}, {"train_accuracy", trained.train_accuracy}};
  if (!o.dev.empty()) {
    auto dev = read_tagged({o.dev}, st);
    std::vector<sf::TagSequence> gold, pred;
    for (const auto& a : dev) {
      gold.push_back(a.tags);
      pred.push_back(trained.model.predict(a.utterance.tokens));
    }
    auto rep = sf::token_prf(gold, pred);
    st.metrics()["dev"] = rep.to_json();
    std::cout << rep.to_table();
  }
}

struct TagOpts {
  std::string model, input, out;
};

void run_tag(const TagOpts& o, Stage& st) {
  st.input(o.model);
  st.input(o.input);
  st.check_manifest();
  auto model = sf::TaggerModel::load(o.model);
  auto corpus = sf::parse_corpus(o.input);
  for (const auto& r : corpus.rejected)
    st.report().warnings.push_back("line " + std::to_string(r.line) + ": rejected '" + r.id + "': " + r.reason);
  std::vector<sf::AnnotatedUtterance> tagged;
  for (const auto& u : corpus.utterances) tagged.push_back(sf::tag(model, u));
  {
    auto out = open_out(o.out);
    sf::write_bio(out, tagged);
  }
  st.output(o.out);
  st.metrics() = {{"tagged", tagged.size()}, {"rejected", corpus.rejected.size()}};
}

struct PosTagOpts {
  std::string input, out;
};

void run_pos_tag(const PosTagOpts& o, Stage& st) {
  st.input(o.input);
  st.check_manifest();
  std::vector<sf::AnnotatedUtterance> tagged;
  for (const auto& p : sf::parse_pos(o.input)) tagged.push_back(sf::pos_rule_tag(p));
  {
    auto out = open_out(o.out);
    sf::write_bio(out, tagged);
  }
  st.output(o.out);
  st.metrics() = {{"tagged", tagged.size()}};
}

struct EmbedOpts {
  std::string method;
  std::vector<std::string> input;
  std::string out, table;
  std::size_t dim = 128;
  int window = 2, skip_number = 2, negatives = 64, epochs = 5, ngram_order = 2;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
  int feature_maps = 32;
  std::size_t subword_dim = 32;
  std::vector<int> widths = {1, 2, 3, 4};
  double dropout = 0.2;
};

void run_embed(const EmbedOpts& o, Stage& st) {
  for (const auto& p : o.input) st.input(p);
  st.check_manifest();
  auto method = sf::parse_embed_method(o.method);
  auto streams = sf::mentionize_corpus(read_tagged(o.input, st));
  const auto seed = resolve_seed(o.seed);
  if (method == sf::EmbedMethod::Cnn) {
    sf::CnnConfig cfg;
    cfg.widths = o.widths;
    cfg.feature_maps = o.feature_maps;
    cfg.d_in = o.subword_dim;
    cfg.window = o.window;
    cfg.skip_number = o.skip_number;
    cfg.negatives = o.negatives;
    cfg.epochs = o.epochs;
    cfg.learning_rate = o.learning_rate;
    cfg.seed = seed;
    cfg.subword_dropout = o.dropout;
    cfg.validate();
    st.args().update({{"method", "cnn"},          {"widths", cfg.widths}, {"feature_maps", cfg.feature_maps},
                      {"subword_dim", cfg.d_in},  {"window", cfg.window}, {"skip_number", cfg.skip_number},
                      {"negatives", cfg.negatives}, {"epochs", cfg.epochs}, {"learning_rate", cfg.learning_rate},
                      {"seed", cfg.seed},         {"dropout", cfg.subword_dropout}});
    auto trained = sf::train_cnn_encoder(streams, cfg);
    trained.encoder.save(o.out);
    st.output(o.out);
    if (!o.table.empty()) {
      sf::encode_table(trained.encoder, streams).save_binary(o.table);
      st.output(o.table);
    }
    st.report().warnings.insert(st.report().warnings.end(), trained.warnings.begin(), trained.warnings.end());
    st.metrics() = {{"heldout_loss", trained.heldout_loss}, {"dim", trained.encoder.dim()}};
    return;
  }
  sf::EmbedTrainConfig cfg;
  cfg.dim = o.dim;
  cfg.window = o.window;
  cfg.skip_number = o.skip_number;
  cfg.negatives = o.negatives;
  cfg.epochs = o.epochs;
  cfg.learning_rate = o.learning_rate;
  cfg.seed = seed;
  cfg.ngram_order = o.ngram_order;
  cfg.validate();
  st.args().update({{"method", o.method},       {"dim", cfg.dim},           {"window", cfg.window},
                    {"skip_number", cfg.skip_number}, {"negatives", cfg.negatives}, {"epochs", cfg.epochs},
                    {"learning_rate", cfg.learning_rate}, {"seed", cfg.seed}, {"ngram_order", cfg.ngram_order}});
  auto table = sf::train_skipgram(streams, cfg, method);
  table.save_binary(o.out);
  st.output(o.out);
  st.metrics() = {{"rows", table.size()}, {"dim", table.dim()}};
}

struct ClusterOpts {
  std::string method, embeddings, out;
  std::vector<std::string> input;
  std::size_t knn_k = 5, kmeans_k = 5;
  int max_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

// clusters.json: {method, roles: {Role: {mentions, frequencies, labels,
// num_clusters, unembedded}}}. Unembedded mentions become singleton concepts.
void run_cluster(const ClusterOpts& o, Stage& st) {
  st.input(o.embeddings);
  for (const auto& p : o.input) st.input(p);
  st.check_manifest();
  sf::ClusterConfig cfg;
  cfg.method = sf::parse_cluster_method(o.method);
  if (o.knn_k == 0) throw sf::InvalidArgument("--knn-k must be > 0");
  if (o.kmeans_k == 0) throw sf::InvalidArgument("--kmeans-k must be > 0");
  if (o.max_iters < 1 || !(o.tol > 0)) throw sf::InvalidArgument("--max-iters and --tol must be positive");
  cfg.knn_k = o.knn_k;
  cfg.kmeans_k = o.kmeans_k;
  cfg.lpa.max_iters = o.max_iters;
  cfg.lpa.tol = o.tol;
  const auto seed = resolve_seed(o.seed);
  cfg.kmeans_seeds.clear();
  for (std::uint64_t i = 0; i < 5; ++i) cfg.kmeans_seeds.push_back(seed + i);
  cfg.mine_seed = seed;
  st.args().update({{"method", o.method}, {"knn_k", cfg.knn_k}, {"kmeans_k", cfg.kmeans_k}, {"max_iters", o.max_iters},
                    {"tol", o.tol}, {"seed", seed}});

  auto embed = read_embedder(o.embeddings);
  auto counts = sf::mention_counts(sf::mentionize_corpus(read_tagged(o.input, st)));
  json roles = json::object();
  std::size_t total_clusters = 0;
  for (auto role : sf::kAllRoles) {
    std::vector<std::string> names, lone;
    std::vector<std::size_t> freqs;
    std::vector<sf::Vector> vecs;
    for (const auto& [key, n] : counts) {
      if (key.first != role) continue;
      auto v = embed->embed(key.second);
      if (!v || sf::norm2(*v) == 0) {
        lone.push_back(key.second);
        continue;
      }
      names.push_back(key.second);
      freqs.push_back(n);
      vecs.push_back(std::move(*v));
    }
    auto a = sf::cluster_vectors(vecs, cfg);
    total_clusters += a.num_clusters + lone.size();
    roles[std::string(sf::role_name(role))] = {{"mentions", names},        {"frequencies", freqs},
                                              {"labels", a.labels},        {"num_clusters", a.num_clusters},
                                              {"iterations", a.iterations}, {"unembedded", lone}};
  }
  write_json(o.out, {{"method", o.method}, {"roles", roles}});
  st.output(o.out);
  st.metrics() = {{"mentions", counts.size()}, {"clusters", total_clusters}};
}

struct NameOpts {
  std::string clusters, out;
};

void run_name_concepts(const NameOpts& o, Stage& st) {
  st.input(o.clusters);
  st.check_manifest();
  auto j = read_json(o.clusters);
  sf::ConceptRepository repo;
  try {
    for (auto role : sf::kAllRoles) {
      auto key = std::string(sf::role_name(role));
      if (!j.at("roles").contains(key)) continue;
      const auto& r = j["roles"][key];
      auto names = r.at("mentions").get<std::vector<std::string>>();
      sf::ClusterAssignment a;
      a.labels = r.at("labels").get<std::vector<std::size_t>>();
      a.num_clusters = r.at("num_clusters").get<std::size_t>();
      for (auto l : a.labels)
        if (l >= a.num_clusters) throw sf::InvalidArgument("cluster label out of range in role " + key);
      if (!names.empty())
        sf::add_named_clusters(repo, a, names, role, r.at("frequencies").get<std::vector<std::size_t>>());
      for (const auto& m : r.value("unembedded", std::vector<std::string>{})) repo.add_concept(role, m, {m});
    }
  } catch (const json::exception& e) {
    throw sf::ParseError(o.clusters + ": " + e.what(), 0);
  }
  repo.save(o.out);
  st.output(o.out);
  st.metrics() = {{"concepts", repo.size()}, {"mentions", repo.mention_count()}};
}

struct PatternOpts {
  std::vector<std::string> input;
  std::string out;
  double min_support = 0.05, min_confidence = 0.1;
};

void run_mine_patterns(const PatternOpts& o, Stage& st) {
  for (const auto& p : o.input) st.input(p);
  st.check_manifest();
  if (o.min_support < 0 || o.min_support > 1 || o.min_confidence < 0 || o.min_confidence > 1)
    throw sf::InvalidArgument("--min-support and --min-confidence must lie in [0, 1]");
  st.args().update({{"min_support", o.min_support}, {"min_confidence", o.min_confidence}});
  auto data = read_tagged(o.input, st);
  auto sets = sf::extract_role_sets(data);
  auto patterns = sf::apriori(sets.role_sets, o.min_support, o.min_confidence);
  patterns.save(o.out);
  st.output(o.out);
  auto typical = sf::typical_patterns(patterns);
  st.metrics() = {{"utterances", sets.role_sets.size()},
                  {"patterns", patterns.patterns.size()},
                  {"coverage", sf::pattern_coverage(patterns, sets.role_sets)},
                  {"typical", typical}};
  for (const auto& t : typical) std::cout << t << '\n';
}

struct InferOpts {
  std::string model_dir = "model", text, input, out, pool_out, id = "text";
  double delta = 0.2;
  std::size_t k = 5;
};

void run_infer(const InferOpts& o, Stage& st) {
  if (o.text.empty() == o.input.empty()) throw sf::InvalidArgument("infer: give exactly one of --text or --input");
  if (!o.input.empty() && o.out.empty()) throw sf::InvalidArgument("infer: --input requires --out");
  for (const char* a : {sf::artifacts::kTagger, sf::artifacts::kConcepts, sf::artifacts::kPatterns}) {
    auto p = (std::filesystem::path(o.model_dir) / a).string();
    st.input(p);
  }
  if (!o.input.empty()) st.input(o.input);
  st.check_manifest();
  sf::ConInferConfig cfg{o.delta, o.k};
  cfg.validate();
  st.args().update({{"delta", cfg.delta}, {"k", cfg.k}, {"model_dir", o.model_dir}});
  auto bundle = sf::load_model_dir(o.model_dir);
  sf::InferenceModel model(bundle.tagger, bundle.repo, bundle.patterns, bundle.embed.get(), cfg);
  sf::UncategorizedPool pool;

  std::vector<sf::Utterance> utterances;
  if (!o.text.empty()) {
    auto u = sf::make_utterance(o.id, o.text);
    if (u.tokens.empty()) throw sf::InvalidArgument("infer: --text is empty");
    utterances.push_back(std::move(u));
  } else {
    auto corpus = sf::parse_corpus(o.input);
    for (const auto& r : corpus.rejected)
      st.report().warnings.push_back("line " + std::to_string(r.line) + ": rejected '" + r.id + "': " + r.reason);
    utterances = std::move(corpus.utterances);
  }
  std::map<std::string, std::size_t> statuses;
  std::vector<json> results;
  for (const auto& u : utterances) {
    auto r = sf::infer(u, model, &pool);
    ++statuses[std::string(sf::status_name(r.status))];
    results.push_back(r.to_json());
  }
  if (o.out.empty()) {
    for (const auto& r : results) std::cout << r.dump(2) << '\n';
  } else {
    {
      auto out = open_out(o.out);
      for (const auto& r : results) out << r.dump() << '\n';
    }
    st.output(o.out);
  }
  if (!o.pool_out.empty()) {
    {
      auto out = open_out(o.pool_out);
      sf::write_pool_jsonl(out, pool.snapshot());
    }
    st.output(o.pool_out);
  }
  st.metrics() = {{"utterances", utterances.size()}, {"statuses", statuses}, {"uncategorized", pool.size()}};
}

struct ExpandOpts {
  std::string model_dir = "model", pool, out, method = "lpa";
  std::size_t knn_k = 5, kmeans_k = 2;
  std::uint64_t seed = 0;
};

void run_expand(const ExpandOpts& o, Stage& st) {
  st.input(o.pool);
  st.input((std::filesystem::path(o.model_dir) / sf::artifacts::kConcepts).string());
  st.check_manifest();
  sf::ExpandConfig cfg;
  cfg.method = sf::parse_cluster_method(o.method);
  if (o.knn_k == 0 || o.kmeans_k == 0) throw sf::InvalidArgument("--knn-k and --kmeans-k must be > 0");
  cfg.knn_k = o.knn_k;
  cfg.kmeans_k = o.kmeans_k;
  cfg.seed = resolve_seed(o.seed);
  st.args().update({{"method", o.method}, {"knn_k", cfg.knn_k}, {"kmeans_k", cfg.kmeans_k}, {"seed", cfg.seed}});
  auto repo = sf::ConceptRepository::load((std::filesystem::path(o.model_dir) / sf::artifacts::kConcepts).string());
  auto embed = sf::load_embedder(o.model_dir);
  auto entries = sf::read_pool_jsonl(o.pool);
  for (auto& e : entries) e.embedding = embed->embed(e.mention);
  auto expanded = sf::expand_concepts(entries, repo, embed.get(), cfg);
  expanded.save(o.out);
  st.output(o.out);
  st.metrics() = {{"pool", entries.size()}, {"concepts_before", repo.size()}, {"concepts_after", expanded.size()}};
}

struct EvalOpts {
  std::string kind, gold, pred, out, concepts, gold_concepts;
};

std::map<std::string, sf::IntentSlotResult> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sf::MissingFile(path);
  std::map<std::string, sf::IntentSlotResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto r = sf::IntentSlotResult::from_json(json::parse(line));
      out[r.id] = std::move(r);
    } catch (const json::exception& e) {
      throw sf::ParseError(path + ": " + e.what(), lineno);
    }
  }
  return out;
}

void run_eval(const EvalOpts& o, Stage& st) {
  st.input(o.gold);
  st.input(o.pred);
  if (!o.concepts.empty()) st.input(o.concepts);
  if (!o.gold_concepts.empty()) st.input(o.gold_concepts);
  st.check_manifest();
  st.args().update({{"kind", o.kind}});
  json result;

  if (o.kind == "irl") {
    auto gold = read_tagged({o.gold}, st), pred = read_tagged({o.pred}, st);
    std::map<std::string, const sf::AnnotatedUtterance*> by_id;
    for (const auto& p : pred) by_id[p.utterance.id] = &p;
    std::vector<sf::TagSequence> g, p;
    for (const auto& a : gold) {
      auto it = by_id.find(a.utterance.id);
      if (it == by_id.end()) throw sf::InvalidArgument("eval irl: no prediction for utterance '" + a.utterance.id + "'");
      if (it->second->utterance.tokens != a.utterance.tokens)
        throw sf::InvalidArgument("eval irl: tokens differ for utterance '" + a.utterance.id + "'");
      g.push_back(a.tags);
      p.push_back(it->second->tags);
    }
    auto rep = sf::token_prf(g, p);
    std::cout << rep.to_table();
    result = rep.to_json();
  } else if (o.kind == "intent" || o.kind == "slot") {
    if (o.concepts.empty() != o.gold_concepts.empty())
      throw sf::InvalidArgument("eval: --concepts and --gold-concepts go together");
    auto gold = read_results(o.gold);
    auto pred = read_results(o.pred);
    if (!o.concepts.empty()) {
      auto induced = sf::ConceptRepository::load(o.concepts);
      auto ref_repo = sf::ConceptRepository::load(o.gold_concepts);
      std::map<std::pair<sf::IntentRole, std::string>, std::string> ref;
      for (const auto& [_, c] : ref_repo.concepts())
        for (const auto& m : c.mentions) ref[{c.role, m}] = c.name;
      auto mapping = sf::map_concepts_by_overlap(induced, ref);
      for (auto& [_, r] : pred) r = sf::translate_result(r, induced, mapping);
    }
    std::vector<std::string> gi, pi;
    std::set<sf::SlotTuple> gs, ps;
    std::size_t missing = 0;
    for (const auto& [id, g] : gold) {
      gi.push_back(g.intent);
      for (const auto& [name, surfaces] : g.slots)
        for (const auto& s : surfaces) gs.insert({id, name, s});
      auto it = pred.find(id);
      if (it == pred.end()) {
        ++missing;
        pi.emplace_back();
        continue;
      }
      pi.push_back(it->second.intent);
      for (const auto& [name, surfaces] : it->second.slots)
        for (const auto& s : surfaces) ps.insert({id, name, s});
    }
    if (missing) st.report().warnings.push_back(std::to_string(missing) + " gold utterances have no prediction");
    if (gold.empty()) throw sf::InvalidArgument("eval: gold file is empty");
    if (o.kind == "intent") {
      auto rep = sf::intent_macro_f1(gi, pi);
      result = rep.to_json();
      std::cout << rep.to_table();
    } else {
      auto p = sf::slot_prf(gs, ps);
      result = {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}, {"support", p.support}};
    }
  } else if (o.kind == "cluster") {
    auto gold = sf::ConceptRepository::load(o.gold);
    auto pred = sf::ConceptRepository::load(o.pred);
    std::map<std::pair<sf::IntentRole, std::string>, sf::ConceptId> pred_of;
    for (const auto& [id, c] : pred.concepts())
      for (const auto& m : c.mentions) pred_of[{c.role, m}] = id;
    std::vector<sf::ConceptId> g, p;
    std::size_t unmatched = 0;
    for (const auto& [id, c] : gold.concepts())
      for (const auto& m : c.mentions) {
        auto it = pred_of.find({c.role, m});
        if (it == pred_of.end()) {
          ++unmatched;
          continue;
        }
        g.push_back(id);
        p.push_back(it->second);
      }
    if (g.empty()) throw sf::InvalidArgument("eval cluster: no mention is shared by gold and prediction");
    if (unmatched)
      st.report().warnings.push_back(std::to_string(unmatched) + " gold mentions absent from the prediction were skipped");
    result = sf::clustering_scores(g, p).to_json();
    result["mentions"] = g.size();
  } else {
    throw sf::InvalidArgument("eval: kind must be irl, intent, slot or cluster");
  }

  st.metrics() = result;
  std::cout << result.dump(2) << '\n';
  if (!o.out.empty()) {
    write_json(o.out, result);
    st.output(o.out);
  }
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void run_serve(const sf::ServeConfig& cfg, Stage& st) {
  cfg.infer.validate();
  if (cfg.port < 0 || cfg.port > 65535) throw sf::InvalidArgument("--port must be in [0, 65535]");
  for (const char* a : {sf::artifacts::kTagger, sf::artifacts::kConcepts, sf::artifacts::kPatterns})
    st.input((std::filesystem::path(cfg.model_dir) / a).string());
  st.check_manifest();
  st.args().update({{"host", cfg.host}, {"port", cfg.port}, {"model_dir", cfg.model_dir}, {"log_path", cfg.log_path},
                    {"snapshot_every", cfg.snapshot_every}, {"delta", cfg.infer.delta}, {"k", cfg.infer.k}});
  httplib::Server server;
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  sf::serve(cfg, server, [&](int port) {
    std::cerr << json{{"listening", cfg.host + ":" + std::to_string(port)}}.dump() << std::endl;
  });
  g_server = nullptr;
}

int emit_error(int code, const std::string& kind, const std::string& message, const std::string& path = {}) {
  json e = {{"code", kind}, {"message", message}};
  if (!path.empty()) e["path"] = path;
  std::cerr << json{{"error", e}}.dump() << '\n';
  if (g_stage) g_stage->fail(message);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"schema_forge: intent-schema induction pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "schema_forge 0.1.0");

  Common common;
  std::function<void(Stage&)> action;
  std::string stage_name;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--report", common.report, "Run report path (default: <first output>.report.json)");
    sub->add_option("--manifest", common.manifest, "Pipeline manifest to check inputs against and record into");
    sub->add_option("--threads", common.threads, "Worker threads; stages run sequentially")->capture_default_str();
  };
  auto bind = [&](CLI::App* sub, auto fn) {
    add_common(sub);
    sub->callback([&, sub, fn] {
      stage_name = sub->get_name();
      action = fn;
    });
  };

  SynthOpts synth;
  {
    auto* s = app.add_subcommand("synth", "Generate a synthetic corpus with gold tags, concepts and intents");
    s->add_option("--out-dir", synth.out_dir, "Output directory")->required();
    s->add_option("--n", synth.n, "Number of utterances")->capture_default_str();
    s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
    s->add_option("--schema", synth.schema, "Schema JSON (default: built-in finance schema)");
    s->add_option("--no-mention-rate", synth.no_mention_rate, "Fraction of utterances without mentions");
    s->add_option("--noise-rate", synth.noise_rate, "Per-mention filler insertion probability");
    s->add_option("--argument-absent-rate", synth.argument_absent_rate, "Probability of dropping the optional Argument");
    s->add_option("--cue-rate", synth.cue_rate, "Probability of a cue word after a mention");
    bind(s, [&](Stage& st) { run_synth(synth, st); });
  }

  TrainIrlOpts irl;
  {
    auto* s = app.add_subcommand("train-irl", "Train the BIO role tagger");
    s->add_option("--train", irl.train, "CoNLL training files")->required();
    s->add_option("--dev", irl.dev, "CoNLL file scored after training");
    s->add_option("--out", irl.out, "Tagger model JSON")->required();
    s->add_option("--epochs", irl.epochs, "Training epochs")->capture_default_str();
    s->add_option("--window", irl.window, "Token-context radius")->capture_default_str();
    s->add_option("--max-affix", irl.max_affix, "Longest prefix/suffix feature")->capture_default_str();
    s->add_option("--seed", irl.seed, "Shuffle seed")->capture_default_str();
    s->add_flag("--no-averaging", irl.no_averaging, "Keep the final weights instead of the averaged ones");
    bind(s, [&](Stage& st) { run_train_irl(irl, st); });
  }

  TagOpts tag_opts;
  {
    auto* s = app.add_subcommand("tag", "Tag a JSONL corpus with a trained tagger");
    s->add_option("--model", tag_opts.model, "Tagger model JSON")->required();
    s->add_option("--input", tag_opts.input, "Corpus JSONL")->required();
    s->add_option("--out", tag_opts.out, "Tagged CoNLL output")->required();
    bind(s, [&](Stage& st) { run_tag(tag_opts, st); });
  }

  PosTagOpts pos_opts;
  {
    auto* s = app.add_subcommand("pos-tag", "Tag token<TAB>POS blocks with the POS rules");
    s->add_option("--input", pos_opts.input, "token<TAB>POS CoNLL file")->required();
    s->add_option("--out", pos_opts.out, "Tagged CoNLL output")->required();
    bind(s, [&](Stage& st) { run_pos_tag(pos_opts, st); });
  }

  EmbedOpts embed;
  {
    auto* s = app.add_subcommand("embed", "Train mention embeddings: w2v, p2v or cnn");
    s->add_option("method", embed.method, "w2v | p2v | cnn")->required()->check(CLI::IsMember({"w2v", "p2v", "cnn"}));
    s->add_option("--input", embed.input, "Tagged CoNLL files")->required();
    s->add_option("--out", embed.out, "Embedding table (w2v, p2v) or encoder JSON (cnn)")->required();
    s->add_option("--table", embed.table, "cnn only: also write the encoded mention table");
    s->add_option("--dim", embed.dim, "w2v/p2v: embedding dimension")->capture_default_str();
    s->add_option("--window", embed.window, "Skip window")->capture_default_str();
    s->add_option("--skip-number", embed.skip_number, "Contexts per center")->capture_default_str();
    s->add_option("--negatives", embed.negatives, "Negative samples per context")->capture_default_str();
    s->add_option("--epochs", embed.epochs, "Training epochs")->capture_default_str();
    s->add_option("--learning-rate", embed.learning_rate, "Initial learning rate")->capture_default_str();
    s->add_option("--ngram-order", embed.ngram_order, "p2v: longest n-gram center")->capture_default_str();
    s->add_option("--seed", embed.seed, "Training seed")->capture_default_str();
    s->add_option("--widths", embed.widths, "cnn: filter widths")->capture_default_str();
    s->add_option("--feature-maps", embed.feature_maps, "cnn: feature maps per width")->capture_default_str();
    s->add_option("--subword-dim", embed.subword_dim, "cnn: subword input dimension")->capture_default_str();
    s->add_option("--dropout", embed.dropout, "cnn: subword dropout")->capture_default_str();
    bind(s, [&](Stage& st) { run_embed(embed, st); });
  }

  ClusterOpts cluster;
  {
    auto* s = app.add_subcommand("cluster", "Cluster the mentions of each role: kmeans, lpa or mine");
    s->add_option("method", cluster.method, "kmeans | lpa | mine")->required()->check(CLI::IsMember({"kmeans", "lpa", "mine"}));
    s->add_option("--embeddings", cluster.embeddings, "Embedding table or encoder JSON")->required();
    s->add_option("--input", cluster.input, "Tagged CoNLL files supplying mentions")->required();
    s->add_option("--out", cluster.out, "Cluster assignment JSON")->required();
    s->add_option("--knn-k", cluster.knn_k, "Neighbors per node in the kNN graph")->capture_default_str();
    s->add_option("--kmeans-k", cluster.kmeans_k, "K-means cluster count")->capture_default_str();
    s->add_option("--max-iters", cluster.max_iters, "LPA iteration cap")->capture_default_str();
    s->add_option("--tol", cluster.tol, "LPA convergence tolerance")->capture_default_str();
    s->add_option("--seed", cluster.seed, "Seed (K-means uses seed..seed+4)")->capture_default_str();
    bind(s, [&](Stage& st) { run_cluster(cluster, st); });
  }

  NameOpts name_opts;
  {
    auto* s = app.add_subcommand("name-concepts", "Turn clusters into a named concept repository");
    s->add_option("--clusters", name_opts.clusters, "Cluster assignment JSON")->required();
    s->add_option("--out", name_opts.out, "Concept repository JSON")->required();
    bind(s, [&](Stage& st) { run_name_concepts(name_opts, st); });
  }

  PatternOpts patterns;
  {
    auto* s = app.add_subcommand("mine-patterns", "Mine intent-role patterns with Apriori");
    s->add_option("--input", patterns.input, "Tagged CoNLL files")->required();
    s->add_option("--out", patterns.out, "Pattern set JSON")->required();
    s->add_option("--min-support", patterns.min_support, "Minimum support")->capture_default_str();
    s->add_option("--min-confidence", patterns.min_confidence, "Minimum confidence")->capture_default_str();
    bind(s, [&](Stage& st) { run_mine_patterns(patterns, st); });
  }

  InferOpts infer;
  {
    auto* s = app.add_subcommand("infer", "Infer intents and slots");
    s->add_option("--model-dir", infer.model_dir, "Directory with tagger, concepts, patterns and embeddings")
        ->capture_default_str();
    s->add_option("--text", infer.text, "Single utterance; the result JSON goes to stdout");
    s->add_option("--id", infer.id, "Utterance id for --text")->capture_default_str();
    s->add_option("--input", infer.input, "Corpus JSONL");
    s->add_option("--out", infer.out, "Result JSONL (required with --input)");
    s->add_option("--pool-out", infer.pool_out, "Uncategorized mentions JSONL");
    s->add_option("--delta", infer.delta, "Similarity threshold")->capture_default_str();
    s->add_option("--k", infer.k, "Neighbors consulted")->capture_default_str();
    bind(s, [&](Stage& st) { run_infer(infer, st); });
  }

  ExpandOpts expand;
  {
    auto* s = app.add_subcommand("expand", "Cluster uncategorized mentions into new concepts");
    s->add_option("--model-dir", expand.model_dir, "Model directory")->capture_default_str();
    s->add_option("--pool", expand.pool, "Uncategorized mentions JSONL")->required();
    s->add_option("--out", expand.out, "Expanded concept repository JSON")->required();
    s->add_option("--method", expand.method, "kmeans | lpa | mine")
        ->capture_default_str()
        ->check(CLI::IsMember({"kmeans", "lpa", "mine"}));
    s->add_option("--knn-k", expand.knn_k, "Neighbors per node")->capture_default_str();
    s->add_option("--kmeans-k", expand.kmeans_k, "K-means cluster count")->capture_default_str();
    s->add_option("--seed", expand.seed, "Clustering seed")->capture_default_str();
    bind(s, [&](Stage& st) { run_expand(expand, st); });
  }

  EvalOpts eval;
  {
    auto* s = app.add_subcommand("eval", "Score predictions: irl, intent, slot or cluster");
    s->add_option("kind", eval.kind, "irl | intent | slot | cluster")
        ->required()
        ->check(CLI::IsMember({"irl", "intent", "slot", "cluster"}));
    s->add_option("--gold", eval.gold, "Gold file (CoNLL, intent JSONL or concepts JSON)")->required();
    s->add_option("--pred", eval.pred, "Predicted file of the same kind")->required();
    s->add_option("--concepts", eval.concepts, "intent/slot: induced concepts, mapped onto --gold-concepts");
    s->add_option("--gold-concepts", eval.gold_concepts, "intent/slot: reference concepts");
    s->add_option("--out", eval.out, "Metrics JSON");
    bind(s, [&](Stage& st) { run_eval(eval, st); });
  }

  sf::ServeConfig serve_cfg;
  {
    auto* s = app.add_subcommand("serve", "Serve inference and refinement over HTTP");
    s->add_option("--host", serve_cfg.host, "Bind address")->capture_default_str();
    s->add_option("--port", serve_cfg.port, "Port; 0 picks a free one")->capture_default_str();
    s->add_option("--model-dir", serve_cfg.model_dir, "Model directory")->capture_default_str();
    s->add_option("--log-path", serve_cfg.log_path, "Refinement log (default: <model-dir>/refine.jsonl)");
    s->add_option("--snapshot-every", serve_cfg.snapshot_every, "Snapshot every N accepted ops; 0 disables")
        ->capture_default_str();
    s->add_option("--delta", serve_cfg.infer.delta, "Similarity threshold")->capture_default_str();
    s->add_option("--k", serve_cfg.infer.k, "Neighbors consulted")->capture_default_str();
    bind(s, [&](Stage& st) { run_serve(serve_cfg, st); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error(kExitInvalid, "invalid_arguments", e.what());
  }

  std::optional<Stage> stage;
  try {
    stage.emplace(stage_name, common);
    g_stage = &*stage;
    action(*stage);
    stage->finish();
    g_stage = nullptr;
    return 0;
  } catch (const sf::MissingFile& e) {
    return emit_error(kExitMissing, "missing_input", e.what(), e.path());
  } catch (const StaleInput& e) {
    return emit_error(kExitStale, "stale_input", e.what());
  } catch (const sf::InvalidArgument& e) {
    return emit_error(kExitInvalid, "invalid_config", e.what());
  } catch (const sf::ParseError& e) {
    return emit_error(kExitInvalid, "parse_error", e.what());
  } catch (const json::exception& e) {
    return emit_error(kExitInvalid, "parse_error", e.what());
  } catch (const std::exception& e) {
    return emit_error(kExitInternal, "internal", e.what());
  }
}
