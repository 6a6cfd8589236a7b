#ifndef SCHEMA_FORGE_REFINEMENT_HPP
#define SCHEMA_FORGE_REFINEMENT_HPP

// Expert edits to a concept repository as an append-only, replayable op log
// with immutable snapshots. One writer at a time; readers get a shared pointer
// to the latest published repository and never see a half-applied edit.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "schema_forge/concepts.hpp"

namespace schema_forge {

enum class OpKind { Rename, Merge, Split, Move, Create, DeleteEmpty };

inline std::string_view op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::Rename: return "rename";
    case OpKind::Merge: return "merge";
    case OpKind::Split: return "split";
    case OpKind::Move: return "move";
    case OpKind::Create: return "create";
    case OpKind::DeleteEmpty: return "delete_empty";
  }
  return "?";
}

inline OpKind parse_op_kind(std::string_view s) {
  for (auto k : {OpKind::Rename, OpKind::Merge, OpKind::Split, OpKind::Move, OpKind::Create, OpKind::DeleteEmpty})
    if (op_kind_name(k) == s) return k;
  throw InvalidArgument("unknown refinement op '" + std::string(s) + "'");
}

/// One edit. Only the fields of its kind are meaningful:
///   rename        concept_id, name
///   merge         src_ids, dst_id
///   split         concept_id, partition, names (optional, one per part)
///   move          mention, role, from_id, to_id
///   create        role, name
///   delete_empty  concept_id
struct RefinementOp {
  OpKind kind = OpKind::Rename;
  ConceptId concept_id = 0;
  std::string name;
  std::vector<ConceptId> src_ids;
  ConceptId dst_id = 0;
  std::vector<std::vector<std::string>> partition;
  std::vector<std::string> names;
  std::string mention;
  IntentRole role = IntentRole::Argument;
  ConceptId from_id = 0;
  ConceptId to_id = 0;

  std::string actor;
  std::string timestamp;
  /// Position in the log, assigned on acceptance; 0 until then.
  std::uint64_t seq = 0;
  /// Log position of the snapshot the op was issued against, if known.
  std::optional<std::uint64_t> base_seq;

  json to_json() const {
    json j = {{"op", std::string(op_kind_name(kind))}, {"actor", actor}, {"timestamp", timestamp}, {"seq", seq}};
    if (base_seq) j["base_seq"] = *base_seq;
    switch (kind) {
      case OpKind::Rename: j["concept_id"] = concept_id, j["name"] = name; break;
      case OpKind::Merge: j["src_ids"] = src_ids, j["dst_id"] = dst_id; break;
      case OpKind::Split:
        j["concept_id"] = concept_id, j["partition"] = partition;
        if (!names.empty()) j["names"] = names;
        break;
      case OpKind::Move:
        j["mention"] = mention, j["role"] = std::string(role_name(role)), j["from_id"] = from_id, j["to_id"] = to_id;
        break;
      case OpKind::Create: j["role"] = std::string(role_name(role)), j["name"] = name; break;
      case OpKind::DeleteEmpty: j["concept_id"] = concept_id; break;
    }
    return j;
  }

  static RefinementOp from_json(const json& j) {
    if (!j.is_object()) throw InvalidArgument("refinement op must be a JSON object");
    RefinementOp op;
    try {
      op.kind = parse_op_kind(j.at("op").get<std::string>());
      op.actor = j.value("actor", "");
      op.timestamp = j.value("timestamp", "");
      op.seq = j.value("seq", std::uint64_t{0});
      if (j.contains("base_seq") && !j["base_seq"].is_null()) op.base_seq = j["base_seq"].get<std::uint64_t>();
      switch (op.kind) {
        case OpKind::Rename:
          op.concept_id = j.at("concept_id").get<ConceptId>();
          op.name = j.at("name").get<std::string>();
          break;
        case OpKind::Merge:
          op.src_ids = j.at("src_ids").get<std::vector<ConceptId>>();
          op.dst_id = j.at("dst_id").get<ConceptId>();
          break;
        case OpKind::Split:
          op.concept_id = j.at("concept_id").get<ConceptId>();
          op.partition = j.at("partition").get<std::vector<std::vector<std::string>>>();
          op.names = j.value("names", std::vector<std::string>{});
          break;
        case OpKind::Move:
          op.mention = j.at("mention").get<std::string>();
          op.role = require_role(j.at("role").get<std::string>());
          op.from_id = j.at("from_id").get<ConceptId>();
          op.to_id = j.at("to_id").get<ConceptId>();
          break;
        case OpKind::Create:
          op.role = require_role(j.at("role").get<std::string>());
          op.name = j.at("name").get<std::string>();
          break;
        case OpKind::DeleteEmpty: op.concept_id = j.at("concept_id").get<ConceptId>(); break;
      }
    } catch (const json::exception& e) {
      throw InvalidArgument(std::string("malformed refinement op: ") + e.what());
    }
    return op;
  }

  /// Concept ids whose records this op reads or writes. A create touches the id
  /// it will be given, which depends on the repository it lands on.
  std::set<ConceptId> touched(const ConceptRepository& target) const {
    switch (kind) {
      case OpKind::Rename:
      case OpKind::DeleteEmpty: return {concept_id};
      case OpKind::Merge: {
        std::set<ConceptId> s(src_ids.begin(), src_ids.end());
        s.insert(dst_id);
        return s;
      }
      case OpKind::Split: {
        std::set<ConceptId> s = {concept_id};
        for (std::size_t i = 1; i < partition.size(); ++i) s.insert(target.next_id() + static_cast<ConceptId>(i - 1));
        return s;
      }
      case OpKind::Move: return {from_id, to_id};
      case OpKind::Create: return {target.next_id()};
    }
    return {};
  }
};

/// Applies one op to a copy of `repo`. Throws InvalidArgument, leaving `repo`
/// untouched, when the op does not fit the repository.
inline ConceptRepository apply_refinement(const ConceptRepository& repo, const RefinementOp& op) {
  ConceptRepository out = repo;
  auto need = [&](ConceptId id) -> const Concept& {
    if (!out.find(id)) throw InvalidArgument("unknown concept id " + std::to_string(id));
    return out.at(id);
  };
  switch (op.kind) {
    case OpKind::Rename:
      need(op.concept_id);
      out.rename(op.concept_id, op.name);
      break;
    case OpKind::Merge: {
      const auto dst = need(op.dst_id);
      if (op.src_ids.empty()) throw InvalidArgument("merge: no source concepts");
      std::set<ConceptId> seen;
      for (auto id : op.src_ids) {
        const auto src = need(id);
        if (id == op.dst_id) throw InvalidArgument("merge: concept " + std::to_string(id) + " merged into itself");
        if (!seen.insert(id).second) throw InvalidArgument("merge: source " + std::to_string(id) + " listed twice");
        if (src.role != dst.role) throw InvalidArgument("merge: concepts of different roles");
        out.remove_concept(id);
        for (const auto& m : src.mentions) out.add_mention(op.dst_id, m);
      }
      break;
    }
    case OpKind::Split: {
      const auto c = need(op.concept_id);
      if (op.partition.size() < 2) throw InvalidArgument("split: need at least two parts");
      if (!op.names.empty() && op.names.size() != op.partition.size())
        throw InvalidArgument("split: names must match the number of parts");
      std::vector<std::string> covered;
      for (const auto& part : op.partition) {
        if (part.empty()) throw InvalidArgument("split: empty part");
        for (const auto& m : part) covered.push_back(normalize_mention(m));
      }
      std::sort(covered.begin(), covered.end());
      if (covered != c.mentions) throw InvalidArgument("split: partition does not cover the concept's mentions exactly");
      for (std::size_t p = 1; p < op.partition.size(); ++p) {
        for (const auto& m : op.partition[p]) out.remove_mention(op.concept_id, m);
        std::vector<std::string> part = op.partition[p];
        std::string name = op.names.empty() ? normalize_mention(*std::min_element(part.begin(), part.end(), [](const auto& a, const auto& b) {
          return normalize_mention(a) < normalize_mention(b);
        }))
                                            : op.names[p];
        out.add_concept(c.role, name, part);
      }
      if (!op.names.empty()) out.rename(op.concept_id, op.names[0]);
      break;
    }
    case OpKind::Move: {
      const auto from = need(op.from_id);
      const auto to = need(op.to_id);
      if (from.role != op.role || to.role != op.role) throw InvalidArgument("move: role does not match both concepts");
      if (op.from_id == op.to_id) throw InvalidArgument("move: source and target are the same concept");
      if (out.lookup(op.mention, op.role) != op.from_id)
        throw InvalidArgument("move: '" + op.mention + "' is not in concept " + std::to_string(op.from_id));
      out.remove_mention(op.from_id, op.mention);
      out.add_mention(op.to_id, op.mention);
      break;
    }
    case OpKind::Create: out.add_concept(op.role, op.name); break;
    case OpKind::DeleteEmpty: {
      if (!need(op.concept_id).mentions.empty())
        throw InvalidArgument("delete_empty: concept " + std::to_string(op.concept_id) + " still has mentions");
      out.remove_concept(op.concept_id);
      break;
    }
  }
  out.check_invariants();
  return out;
}

inline ConceptRepository replay(const ConceptRepository& base, const std::vector<RefinementOp>& ops) {
  ConceptRepository repo = base;
  for (const auto& op : ops) repo = apply_refinement(repo, op);
  return repo;
}

struct RepositorySnapshot {
  std::shared_ptr<const ConceptRepository> repo;
  /// Number of log ops folded into `repo`.
  std::uint64_t position = 0;
  std::string hash;

  json to_json() const { return {{"position", position}, {"hash", hash}, {"repository", repo->to_json()}}; }

  static RepositorySnapshot from_json(const json& j) {
    RepositorySnapshot s;
    s.repo = std::make_shared<const ConceptRepository>(ConceptRepository::from_json(j.at("repository")));
    s.position = j.at("position").get<std::uint64_t>();
    s.hash = j.at("hash").get<std::string>();
    if (s.hash != s.repo->content_hash()) throw ParseError("snapshot hash does not match its repository", 0);
    return s;
  }
};

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  auto t = std::chrono::system_clock::to_time_t(now);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

inline std::vector<RefinementOp> read_op_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  std::vector<RefinementOp> ops;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ops.push_back(RefinementOp::from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), n);
    }
    if (ops.back().seq != ops.size()) throw ParseError("op log sequence gap", n);
  }
  return ops;
}

/// Single-writer op log over a base repository. With a log path, accepted ops
/// are appended as JSON lines (and an existing log is replayed on open); with a
/// snapshot path, the current repository is written there every
/// `snapshot_every` accepted ops.
class RefinementLog {
 public:
  explicit RefinementLog(ConceptRepository base, std::string log_path = {}, std::string snapshot_path = {},
                         std::size_t snapshot_every = 0)
      : base_(std::make_shared<const ConceptRepository>(std::move(base))),
        log_path_(std::move(log_path)),
        snapshot_path_(std::move(snapshot_path)),
        snapshot_every_(snapshot_every) {
    base_->check_invariants();
    current_ = {base_, 0, base_->content_hash()};
    if (!log_path_.empty() && std::filesystem::exists(log_path_)) {
      auto ops = read_op_log(log_path_);
      ConceptRepository repo = *base_;
      std::uint64_t from = 0;
      if (!snapshot_path_.empty() && std::filesystem::exists(snapshot_path_)) {
        std::ifstream in(snapshot_path_);
        auto snap = RepositorySnapshot::from_json(json::parse(in));
        if (snap.position <= ops.size()) {
          repo = *snap.repo;
          from = snap.position;
        }
      }
      // Ops folded into a snapshot have unknown footprints; stale writes that
      // reach back past the snapshot conflict with everything.
      touched_.assign(from, std::nullopt);
      for (std::size_t i = from; i < ops.size(); ++i) {
        touched_.push_back(ops[i].touched(repo));
        repo = apply_refinement(repo, ops[i]);
      }
      ops_ = std::move(ops);
      publish(std::move(repo));
    }
  }

  RepositorySnapshot current() const {
    std::shared_lock lock(snap_mu_);
    return current_;
  }

  const ConceptRepository& base() const { return *base_; }

  std::vector<RefinementOp> since(std::uint64_t seq) const {
    std::lock_guard lock(write_mu_);
    std::vector<RefinementOp> out;
    for (std::size_t i = static_cast<std::size_t>(std::min<std::uint64_t>(seq, ops_.size())); i < ops_.size(); ++i)
      out.push_back(ops_[i]);
    return out;
  }

  std::uint64_t size() const {
    std::lock_guard lock(write_mu_);
    return ops_.size();
  }

  /// Validates and appends one op. Throws Conflict when an op accepted after
  /// `op.base_seq` touched any of the same concepts, InvalidArgument when the op
  /// does not fit the current repository. Returns the op as logged.
  RefinementOp submit(RefinementOp op) {
    std::lock_guard lock(write_mu_);
    const auto cur = current();
    if (op.base_seq) {
      if (*op.base_seq > ops_.size())
        throw InvalidArgument("base_seq " + std::to_string(*op.base_seq) + " is ahead of the log");
      const auto mine = op.touched(*cur.repo);
      for (std::size_t i = static_cast<std::size_t>(*op.base_seq); i < ops_.size(); ++i)
        for (auto id : mine)
          if (!touched_[i] || touched_[i]->count(id))
            throw Conflict("concept " + std::to_string(id) + " may have changed at seq " + std::to_string(i + 1) +
                           "; refetch and retry against seq " + std::to_string(ops_.size()));
    }
    auto touched = op.touched(*cur.repo);
    auto next = apply_refinement(*cur.repo, op);
    op.seq = ops_.size() + 1;
    if (op.timestamp.empty()) op.timestamp = utc_timestamp();
    if (!log_path_.empty()) {
      std::ofstream out(log_path_, std::ios::app);
      if (!out) throw MissingFile(log_path_);
      out << op.to_json().dump() << '\n';
      out.flush();
      if (!out) throw Error("failed to append to op log " + log_path_);
    }
    ops_.push_back(op);
    touched_.push_back(std::move(touched));
    publish(std::move(next));
    if (!snapshot_path_.empty() && snapshot_every_ && ops_.size() % snapshot_every_ == 0) write_snapshot();
    return op;
  }

  /// Writes the current snapshot atomically (temp file then rename).
  void write_snapshot() const {
    if (snapshot_path_.empty()) return;
    auto tmp = snapshot_path_ + ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw MissingFile(tmp);
      out << current().to_json().dump() << '\n';
    }
    std::filesystem::rename(tmp, snapshot_path_);
  }

 private:
  void publish(ConceptRepository repo) {
    auto ptr = std::make_shared<const ConceptRepository>(std::move(repo));
    RepositorySnapshot s{ptr, ops_.size(), ptr->content_hash()};
    std::unique_lock lock(snap_mu_);
    current_ = std::move(s);
  }

  std::shared_ptr<const ConceptRepository> base_;
  std::string log_path_;
  std::string snapshot_path_;
  std::size_t snapshot_every_;

  mutable std::mutex write_mu_;
  std::vector<RefinementOp> ops_;
  std::vector<std::optional<std::set<ConceptId>>> touched_;

  mutable std::shared_mutex snap_mu_;
  RepositorySnapshot current_;
};

}  // namespace schema_forge

#endif
