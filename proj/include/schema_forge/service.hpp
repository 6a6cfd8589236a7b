#ifndef SCHEMA_FORGE_SERVICE_HPP
#define SCHEMA_FORGE_SERVICE_HPP

// HTTP/JSON front end over inference and the refinement log. Request handling
// is a pure function of (method, path, query, body) so it can be exercised
// without sockets; serve() binds it to an httplib server.

#include <httplib.h>

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <regex>
#include <string>

#include "schema_forge/inference.hpp"
#include "schema_forge/pipeline.hpp"
#include "schema_forge/refinement.hpp"

namespace schema_forge {

struct ServiceResponse {
  int status = 200;
  json body;
};

inline ServiceResponse error_response(int status, std::string code, std::string message) {
  return {status, {{"code", std::move(code)}, {"message", std::move(message)}}};
}

class SchemaService {
 public:
  /// `models.repo` is ignored in favor of the log's current snapshot.
  SchemaService(ModelBundle models, RefinementLog& log, ConInferConfig cfg = {})
      : models_(std::move(models)), log_(log), cfg_(cfg) {
    cfg_.validate();
  }

  ServiceResponse handle(const std::string& method, const std::string& path, const std::multimap<std::string, std::string>& query,
                         const std::string& body) {
    try {
      if (method == "GET" && path == "/health") return health();
      if (method == "POST" && path == "/infer") return infer_text(body);
      if (method == "GET" && path == "/concepts") return list_concepts(param(query, "role"));
      static const std::regex concept_path(R"(/concepts/(-?\d+))");
      std::smatch m;
      if (method == "GET" && std::regex_match(path, m, concept_path)) return get_concept(std::stoll(m[1]));
      if (method == "POST" && path == "/refine") return refine(body);
      if (method == "GET" && path == "/refine/log") return log_since(param(query, "since"));
      if (method == "GET" && path == "/neighbors") return neighbors_of(query);
      if (method == "GET" && path == "/patterns") return {200, models_.patterns.to_json()};
      return error_response(404, "not_found", method + " " + path + " is not an endpoint");
    } catch (const Conflict& e) {
      return error_response(409, "conflict", e.what());
    } catch (const InvalidArgument& e) {
      return error_response(400, "invalid_argument", e.what());
    } catch (const json::exception& e) {
      return error_response(400, "bad_json", e.what());
    } catch (const std::exception& e) {
      return error_response(500, "internal", e.what());
    }
  }

  void mount(httplib::Server& server) {
    auto bind = [this](const httplib::Request& req, httplib::Response& res) {
      auto r = handle(req.method, req.path, req.params, req.body);
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json; charset=utf-8");
    };
    server.Get(R"(/.*)", bind);
    server.Post(R"(/.*)", bind);
  }

  const UncategorizedPool& pool() const { return pool_; }

 private:
  static std::optional<std::string> param(const std::multimap<std::string, std::string>& q, const std::string& key) {
    auto it = q.find(key);
    if (it == q.end()) return std::nullopt;
    return it->second;
  }

  static std::uint64_t parse_count(const std::string& s, const char* what) {
    std::size_t used = 0;
    long long v = -1;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception&) {
    }
    if (v < 0 || used != s.size()) throw InvalidArgument(std::string(what) + " must be a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }

  /// Inference model over the latest snapshot, rebuilt after each edit.
  std::shared_ptr<const InferenceModel> model() {
    auto snap = log_.current();
    std::lock_guard lock(model_mu_);
    if (!model_ || model_position_ != snap.position) {
      model_ = std::make_shared<const InferenceModel>(models_.tagger, *snap.repo, models_.patterns, models_.embed.get(), cfg_);
      model_position_ = snap.position;
    }
    return model_;
  }

  ServiceResponse health() {
    auto snap = log_.current();
    return {200,
            {{"status", "ok"},
             {"position", snap.position},
             {"hash", snap.hash},
             {"concepts", snap.repo->size()},
             {"uncategorized", pool_.size()}}};
  }

  ServiceResponse infer_text(const std::string& body) {
    auto j = json::parse(body);
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
      throw InvalidArgument("body must be {\"text\": string}");
    auto text = j["text"].get<std::string>();
    auto u = make_utterance(j.value("id", "q" + std::to_string(++request_id_)), text);
    if (u.tokens.empty()) throw InvalidArgument("text is empty");
    return {200, infer(u, *model(), &pool_).to_json()};
  }

  static json concept_json(const Concept& c) {
    return {{"id", c.id}, {"role", std::string(role_name(c.role))}, {"name", c.name},
            {"mention_count", c.mentions.size()}, {"mentions", c.mentions}};
  }

  ServiceResponse list_concepts(const std::optional<std::string>& role) {
    auto snap = log_.current();
    json list = json::array();
    std::optional<IntentRole> r;
    if (role) r = require_role(*role);
    for (const auto& [_, c] : snap.repo->concepts())
      if (!r || c.role == *r) list.push_back(concept_json(c));
    return {200, {{"position", snap.position}, {"hash", snap.hash}, {"concepts", list}}};
  }

  ServiceResponse get_concept(ConceptId id) {
    auto snap = log_.current();
    const auto* c = snap.repo->find(id);
    if (!c) return error_response(404, "not_found", "unknown concept id " + std::to_string(id));
    auto j = concept_json(*c);
    j["position"] = snap.position;
    return {200, j};
  }

  ServiceResponse refine(const std::string& body) {
    auto j = json::parse(body);
    if (j.is_object() && j.contains("op") && j["op"].is_object()) j = j["op"];
    auto accepted = log_.submit(RefinementOp::from_json(j));
    auto snap = log_.current();
    return {200, {{"op", accepted.to_json()}, {"position", snap.position}, {"hash", snap.hash}}};
  }

  ServiceResponse log_since(const std::optional<std::string>& since) {
    std::uint64_t from = since ? parse_count(*since, "since") : 0;
    json ops = json::array();
    for (const auto& op : log_.since(from)) ops.push_back(op.to_json());
    return {200, {{"ops", ops}, {"position", log_.size()}}};
  }

  ServiceResponse neighbors_of(const std::multimap<std::string, std::string>& q) {
    auto mention = param(q, "mention");
    auto role = param(q, "role");
    if (!mention || !role) throw InvalidArgument("mention and role are required");
    auto r = require_role(*role);
    std::size_t k = 10;
    if (auto ks = param(q, "k")) k = static_cast<std::size_t>(parse_count(*ks, "k"));
    if (!models_.embed) throw InvalidArgument("no embedder loaded");
    auto m = model();
    json list = json::array();
    for (const auto& n : neighbors(m->index, *models_.embed, *mention, r, k))
      list.push_back({{"mention", n.mention}, {"concept_id", n.concept_id},
                      {"concept", m->repo.at(n.concept_id).name}, {"similarity", n.similarity}});
    return {200, {{"mention", *mention}, {"role", *role}, {"neighbors", list}}};
  }

  ModelBundle models_;
  RefinementLog& log_;
  ConInferConfig cfg_;
  UncategorizedPool pool_;
  std::mutex model_mu_;
  std::shared_ptr<const InferenceModel> model_;
  std::uint64_t model_position_ = 0;
  std::atomic<std::uint64_t> request_id_{0};
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string model_dir = "model";
  /// Defaults to <model_dir>/refine.jsonl.
  std::string log_path;
  /// Snapshot written every N accepted ops; 0 disables.
  std::size_t snapshot_every = 50;
  ConInferConfig infer;
};

/// Loads the model directory, replays the op log and blocks serving requests
/// until `server.stop()`. Throws MissingFile naming the first absent artifact.
inline void serve(const ServeConfig& cfg, httplib::Server& server, const std::function<void(int)>& on_listen = {}) {
  auto models = load_model_dir(cfg.model_dir);
  auto log_path = cfg.log_path.empty() ? (std::filesystem::path(cfg.model_dir) / "refine.jsonl").string() : cfg.log_path;
  auto snap_path = log_path + ".snapshot.json";
  RefinementLog log(models.repo, log_path, snap_path, cfg.snapshot_every);
  SchemaService service(std::move(models), log, cfg.infer);
  service.mount(server);
  int port = cfg.port;
  if (port == 0) {
    port = server.bind_to_any_port(cfg.host);
  } else if (!server.bind_to_port(cfg.host, port)) {
    throw Error("cannot bind " + cfg.host + ":" + std::to_string(port));
  }
  if (port < 0) throw Error("cannot bind " + cfg.host);
  if (on_listen) on_listen(port);
  server.listen_after_bind();
}

}  // namespace schema_forge

#endif
