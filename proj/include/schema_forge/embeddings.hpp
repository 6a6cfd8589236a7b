#ifndef SCHEMA_FORGE_EMBEDDINGS_HPP
#define SCHEMA_FORGE_EMBEDDINGS_HPP

// Context-independent mention embeddings: mention-atomic token streams,
// skip-gram with negative sampling (w2v, and p2v with n-gram centers), and the
// exported mention table.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "schema_forge/clustering.hpp"
#include "schema_forge/corpus.hpp"

namespace schema_forge {

enum class EmbedMethod { W2v, P2v, Cnn };

inline std::string_view method_name(EmbedMethod m) {
  switch (m) {
    case EmbedMethod::W2v: return "w2v";
    case EmbedMethod::P2v: return "p2v";
    case EmbedMethod::Cnn: return "cnn";
  }
  return "?";
}

inline EmbedMethod parse_embed_method(std::string_view s) {
  if (s == "w2v") return EmbedMethod::W2v;
  if (s == "p2v") return EmbedMethod::P2v;
  if (s == "cnn") return EmbedMethod::Cnn;
  throw InvalidArgument("unknown embedding method '" + std::string(s) + "'");
}

/// Anything that can map a mention string to a vector, or report it unknown.
class MentionEmbedder {
 public:
  virtual ~MentionEmbedder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::optional<Vector> embed(std::string_view mention) const = 0;
};

// ---------------------------------------------------------------------------
// Mention streams

/// One stream element: a plain token, or a whole mention collapsed to one item.
struct StreamItem {
  std::string text;
  std::optional<IntentRole> role;

  bool is_mention() const { return role.has_value(); }
  /// Vocabulary key; the prefix keeps a mention distinct from a same-spelled token.
  std::string key() const { return (role ? "m:" : "t:") + normalize_mention(text); }

  friend bool operator==(const StreamItem&, const StreamItem&) = default;
};

using MentionStream = std::vector<StreamItem>;

inline MentionStream mentionize(const AnnotatedUtterance& a) {
  const auto& toks = a.utterance.tokens;
  if (a.tags.size() != toks.size()) throw InvalidArgument("mentionize: length mismatch in '" + a.utterance.id + "'");
  MentionStream out;
  std::size_t i = 0;
  for (const auto& m : decode_spans(a.tags)) {
    for (; i < m.start; ++i) out.push_back({toks[i], std::nullopt});
    out.push_back({join_tokens(toks, m.start, m.end, a.utterance.join), m.role});
    i = m.end;
  }
  for (; i < toks.size(); ++i) out.push_back({toks[i], std::nullopt});
  return out;
}

inline std::vector<MentionStream> mentionize_corpus(const std::vector<AnnotatedUtterance>& tagged) {
  std::vector<MentionStream> out;
  out.reserve(tagged.size());
  for (const auto& a : tagged) out.push_back(mentionize(a));
  return out;
}

/// Mention frequencies per role, keyed by normalized mention.
inline std::map<std::pair<IntentRole, std::string>, std::size_t> mention_counts(const std::vector<MentionStream>& streams) {
  std::map<std::pair<IntentRole, std::string>, std::size_t> out;
  for (const auto& s : streams)
    for (const auto& it : s)
      if (it.role) ++out[{*it.role, normalize_mention(it.text)}];
  return out;
}

// ---------------------------------------------------------------------------
// Embedding table

/// Mention → vector, all of one dimension. Unknown mentions are absent.
class EmbeddingTable : public MentionEmbedder {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(EmbedMethod method, std::size_t dim) : method_(method), dim_(dim) {
    if (dim == 0) throw InvalidArgument("embedding dimension must be > 0");
  }

  EmbedMethod method() const { return method_; }
  std::size_t dim() const override { return dim_; }
  std::size_t size() const { return rows_.size(); }
  const std::map<std::string, Vector>& rows() const { return rows_; }

  void set(std::string_view mention, Vector v) {
    if (v.size() != dim_) throw InvalidArgument("embedding dimension mismatch for '" + std::string(mention) + "'");
    rows_[normalize_mention(mention)] = std::move(v);
  }

  bool contains(std::string_view mention) const { return rows_.count(normalize_mention(mention)) > 0; }

  std::optional<Vector> embed(std::string_view mention) const override {
    if (mention.empty()) throw InvalidArgument("encode_mention: empty mention");
    auto it = rows_.find(normalize_mention(mention));
    if (it == rows_.end()) return std::nullopt;
    return it->second;
  }

  // Binary layout, all integers little-endian:
  //   "SFEB" | u32 version=1 | u32 len + method | u32 d | u64 count
  //   count x ( u32 len + UTF-8 mention | d x f32 )
  void save_binary(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFile(path);
    out.write("SFEB", 4);
    put_u32(out, 1);
    auto m = std::string(method_name(method_));
    put_u32(out, static_cast<std::uint32_t>(m.size()));
    out.write(m.data(), static_cast<std::streamsize>(m.size()));
    put_u32(out, static_cast<std::uint32_t>(dim_));
    put_u64(out, rows_.size());
    for (const auto& [k, v] : rows_) {
      put_u32(out, static_cast<std::uint32_t>(k.size()));
      out.write(k.data(), static_cast<std::streamsize>(k.size()));
      for (double x : v) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
  }

  static EmbeddingTable load_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile(path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SFEB", 4) != 0) throw ParseError(path + ": not an embedding table", 0);
    if (get_u32(in) != 1) throw ParseError(path + ": unsupported embedding table version", 0);
    auto method_len = get_u32(in);
    auto method = parse_embed_method(get_string(in, method_len));
    auto dim = get_u32(in);
    EmbeddingTable t(method, dim);
    auto count = get_u64(in);
    for (std::uint64_t r = 0; r < count; ++r) {
      auto len = get_u32(in);
      auto k = get_string(in, len);
      Vector v(t.dim_);
      for (auto& x : v) x = std::bit_cast<float>(get_u32(in));
      t.rows_[k] = std::move(v);
    }
    if (!in) throw ParseError(path + ": truncated embedding table", 0);
    return t;
  }

  /// Debug export: mention, then the components, tab-separated.
  void save_tsv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw MissingFile(path);
    for (const auto& [k, v] : rows_) {
      out << k;
      for (double x : v) out << '\t' << static_cast<float>(x);
      out << '\n';
    }
  }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.method_ == b.method_ && a.dim_ == b.dim_ && a.rows_ == b.rows_;
  }

 private:
  static void put_u32(std::ostream& o, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    o.write(b, 4);
  }
  static void put_u64(std::ostream& o, std::uint64_t v) {
    put_u32(o, static_cast<std::uint32_t>(v));
    put_u32(o, static_cast<std::uint32_t>(v >> 32));
  }
  static std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4] = {0, 0, 0, 0};
    in.read(reinterpret_cast<char*>(b), 4);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  static std::uint64_t get_u64(std::istream& in) {
    std::uint64_t lo = get_u32(in);
    return lo | (static_cast<std::uint64_t>(get_u32(in)) << 32);
  }
  static std::string get_string(std::istream& in, std::uint32_t n) {
    if (n > (1u << 20)) throw ParseError("embedding table: implausible string length", 0);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
  }

  EmbedMethod method_ = EmbedMethod::W2v;
  std::size_t dim_ = 0;
  std::map<std::string, Vector> rows_;
};

/// Table or encoder lookup with the empty-string check shared by both.
inline std::optional<Vector> encode_mention(const MentionEmbedder& e, std::string_view mention) {
  if (mention.empty()) throw InvalidArgument("encode_mention: empty mention");
  return e.embed(mention);
}

// ---------------------------------------------------------------------------
// Skip-gram with negative sampling

struct EmbedTrainConfig {
  std::size_t dim = 128;
  /// Context radius around each center.
  int window = 2;
  /// Contexts sampled per center.
  int skip_number = 2;
  int negatives = 64;
  int epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
  /// Highest n-gram order added as extra centers in p2v mode.
  int ngram_order = 2;
  /// Uniform instead of unigram^0.75 negatives.
  bool uniform_negatives = false;

  void validate() const {
    if (dim == 0) throw InvalidArgument("embedding dim must be > 0");
    if (window < 1) throw InvalidArgument("skip window must be >= 1");
    if (skip_number < 1) throw InvalidArgument("skip number must be >= 1");
    if (negatives < 0) throw InvalidArgument("negatives must be >= 0");
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (!(learning_rate > 0)) throw InvalidArgument("learning rate must be > 0");
    if (ngram_order < 1) throw InvalidArgument("ngram order must be >= 1");
  }
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// Integer ids for stream items, with per-id counts.
struct Vocabulary {
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> keys;
  std::vector<std::size_t> counts;

  std::size_t add(const std::string& k) {
    auto [it, fresh] = index.try_emplace(k, keys.size());
    if (fresh) {
      keys.push_back(k);
      counts.push_back(0);
    }
    ++counts[it->second];
    return it->second;
  }
  std::size_t size() const { return keys.size(); }
};

/// Negative sampler over a discrete distribution proportional to count^power.
class NegativeSampler {
 public:
  NegativeSampler() = default;
  NegativeSampler(const std::vector<std::size_t>& counts, double power) {
    cdf_.reserve(counts.size());
    double acc = 0;
    for (auto c : counts) cdf_.push_back(acc += std::pow(static_cast<double>(c), power));
    for (auto& x : cdf_) x /= acc;
  }
  std::size_t operator()(std::mt19937_64& rng) const {
    double r = uniform01(rng);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), r);
    return std::min(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

/// Up to `count` distinct context positions within `window` of [lo, hi).
inline std::vector<std::size_t> sample_contexts(std::mt19937_64& rng, std::size_t lo, std::size_t hi, std::size_t n,
                                                int window, int count) {
  std::vector<std::size_t> pool;
  for (std::size_t j = lo >= static_cast<std::size_t>(window) ? lo - window : 0; j < lo; ++j) pool.push_back(j);
  for (std::size_t j = hi; j < std::min(n, hi + static_cast<std::size_t>(window)); ++j) pool.push_back(j);
  for (std::size_t k = pool.size(); k > 1; --k) std::swap(pool[k - 1], pool[rng() % k]);
  if (pool.size() > static_cast<std::size_t>(count)) pool.resize(static_cast<std::size_t>(count));
  return pool;
}

}  // namespace detail

/// Trains skip-gram with negative sampling over mention-atomic streams. In p2v
/// mode every run of 2..ngram_order consecutive items is an extra center. The
/// returned table holds every mention and token item; n-gram vectors stay
/// internal.
inline EmbeddingTable train_skipgram(const std::vector<MentionStream>& streams, const EmbedTrainConfig& cfg,
                                     EmbedMethod mode) {
  cfg.validate();
  if (mode == EmbedMethod::Cnn) throw InvalidArgument("train_skipgram: use the CNN encoder for method cnn");
  std::size_t total_items = 0;
  for (const auto& s : streams) total_items += s.size();
  if (streams.empty() || total_items == 0) throw InvalidArgument("train_skipgram: empty streams");

  detail::Vocabulary vocab;
  std::vector<std::vector<std::size_t>> ids(streams.size());
  for (std::size_t s = 0; s < streams.size(); ++s)
    for (const auto& it : streams[s]) ids[s].push_back(vocab.add(it.key()));

  // Centers: (stream, begin, end, center id). N-gram keys join item keys with '\x1f'.
  struct Center {
    std::size_t stream, lo, hi, id;
  };
  std::vector<Center> centers;
  std::unordered_map<std::string, std::size_t> center_index;
  std::vector<std::string> center_keys;
  auto center_id = [&](const std::string& k) {
    auto [it, fresh] = center_index.try_emplace(k, center_keys.size());
    if (fresh) center_keys.push_back(k);
    return it->second;
  };
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const auto& st = streams[s];
    for (std::size_t i = 0; i < st.size(); ++i) {
      centers.push_back({s, i, i + 1, center_id(vocab.keys[ids[s][i]])});
      if (mode != EmbedMethod::P2v) continue;
      std::string k = vocab.keys[ids[s][i]];
      for (int order = 2; order <= cfg.ngram_order && i + static_cast<std::size_t>(order) <= st.size(); ++order) {
        k += '\x1f' + vocab.keys[ids[s][i + static_cast<std::size_t>(order) - 1]];
        centers.push_back({s, i, i + static_cast<std::size_t>(order), center_id("g:" + k)});
      }
    }
  }

  const std::size_t d = cfg.dim;
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> in(center_keys.size() * d), out(vocab.size() * d, 0.0);
  for (auto& x : in) x = (detail::uniform01(rng) - 0.5) / static_cast<double>(d);
  detail::NegativeSampler sampler(vocab.counts, cfg.uniform_negatives ? 0.0 : 0.75);

  const double total_steps = static_cast<double>(cfg.epochs) * static_cast<double>(centers.size());
  double step = 0;
  std::vector<double> grad(d);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& c : centers) {
      const double lr = std::max(cfg.learning_rate * (1.0 - step / total_steps), cfg.learning_rate * 1e-4);
      ++step;
      double* v = &in[c.id * d];
      for (auto ctx : detail::sample_contexts(rng, c.lo, c.hi, streams[c.stream].size(), cfg.window, cfg.skip_number)) {
        std::fill(grad.begin(), grad.end(), 0.0);
        const std::size_t pos = ids[c.stream][ctx];
        for (int k = -1; k < cfg.negatives; ++k) {
          std::size_t target = pos;
          double label = 1;
          if (k >= 0) {
            target = sampler(rng);
            if (target == pos) continue;
            label = 0;
          }
          double* u = &out[target * d];
          double g = lr * (label - detail::sigmoid(dot({v, d}, {u, d})));
          for (std::size_t j = 0; j < d; ++j) {
            grad[j] += g * u[j];
            u[j] += g * v[j];
          }
        }
        for (std::size_t j = 0; j < d; ++j) v[j] += grad[j];
      }
    }
  }

  // Tokens first so that a mention overrides a same-spelled token.
  EmbeddingTable table(mode, d);
  for (const char* prefix : {"t:", "m:"})
    for (std::size_t i = 0; i < center_keys.size(); ++i) {
      const auto& k = center_keys[i];
      if (k.rfind(prefix, 0) != 0) continue;
      table.set(k.substr(2), Vector(in.begin() + static_cast<std::ptrdiff_t>(i * d),
                                    in.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
    }
  return table;
}

}  // namespace schema_forge

#endif
