#ifndef SCHEMA_FORGE_CNN_ENCODER_HPP
#define SCHEMA_FORGE_CNN_ENCODER_HPP

// Subword CNN mention encoder trained with the skip-gram negative-sampling
// loss  L = -log s(o_c . p_t) - sum_i log s(-o_i . p_t),  where p_t is the
// max-pooled convolution of the mention's subword embeddings and o_* are rows
// of a separate output table.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "schema_forge/embeddings.hpp"

namespace schema_forge {

struct CnnConfig {
  std::vector<int> widths = {1, 2, 3, 4};
  int feature_maps = 32;
  std::size_t d_in = 32;
  /// Longer mentions are truncated to this many subwords.
  std::size_t max_len = 16;

  int window = 2;
  int skip_number = 2;
  int negatives = 64;
  int epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
  bool uniform_negatives = false;
  /// Training-time probability of replacing a subword with padding, so that
  /// mentions with unseen subwords stay in distribution.
  double subword_dropout = 0.2;

  std::size_t output_dim() const { return widths.size() * static_cast<std::size_t>(feature_maps); }
  int max_width() const { return widths.empty() ? 0 : *std::max_element(widths.begin(), widths.end()); }

  void validate() const {
    if (widths.empty()) throw InvalidArgument("cnn: at least one filter width required");
    for (int w : widths)
      if (w < 1) throw InvalidArgument("cnn: filter widths must be >= 1");
    if (feature_maps < 1) throw InvalidArgument("cnn: feature maps must be >= 1");
    if (d_in == 0) throw InvalidArgument("cnn: subword dimension must be > 0");
    if (max_len == 0) throw InvalidArgument("cnn: max mention length must be > 0");
    if (window < 1 || skip_number < 1) throw InvalidArgument("cnn: window and skip number must be >= 1");
    if (negatives < 0) throw InvalidArgument("cnn: negatives must be >= 0");
    if (epochs < 1) throw InvalidArgument("cnn: epochs must be >= 1");
    if (!(learning_rate > 0)) throw InvalidArgument("cnn: learning rate must be > 0");
    if (subword_dropout < 0 || subword_dropout >= 1) throw InvalidArgument("cnn: subword dropout must be in [0, 1)");
  }
};

/// Subword units of a mention: its normalized tokens, or its code points when
/// the mention is a single unspaced token containing non-ASCII text.
inline std::vector<std::string> cnn_subwords(std::string_view mention) {
  auto norm = normalize_mention(mention);
  auto toks = split_whitespace(norm);
  if (toks.size() == 1 && std::any_of(norm.begin(), norm.end(), [](char c) { return static_cast<unsigned char>(c) >= 0x80; }))
    return split_utf8_codepoints(norm);
  return toks;
}

/// One training instance: target subwords, one context row, negative rows.
struct CnnExample {
  std::vector<int> subwords;
  std::size_t context = 0;
  std::vector<std::size_t> negatives;
};

class SubwordCnnEncoder : public MentionEmbedder {
 public:
  SubwordCnnEncoder() = default;

  SubwordCnnEncoder(CnnConfig cfg, std::vector<std::string> subword_vocab, std::size_t context_rows)
      : cfg_(std::move(cfg)), subwords_(std::move(subword_vocab)), context_rows_(context_rows) {
    cfg_.validate();
    for (std::size_t i = 0; i < subwords_.size(); ++i) subword_index_[subwords_[i]] = static_cast<int>(i);
    layout();
  }

  const CnnConfig& config() const { return cfg_; }
  std::size_t dim() const override { return cfg_.output_dim(); }
  const std::vector<std::string>& subword_vocabulary() const { return subwords_; }
  std::size_t context_rows() const { return context_rows_; }

  /// Flat parameter vector: subword table, then (W, b) per width, then output table.
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t off, std::size_t n, double a) {
      for (std::size_t i = 0; i < n; ++i) params_[off + i] = (2 * detail::uniform01(rng) - 1) * a;
    };
    fill(0, subwords_.size() * cfg_.d_in, 0.5);
    for (std::size_t k = 0; k < cfg_.widths.size(); ++k) {
      std::size_t fan_in = static_cast<std::size_t>(cfg_.widths[k]) * cfg_.d_in;
      double a = std::sqrt(6.0 / static_cast<double>(fan_in + static_cast<std::size_t>(cfg_.feature_maps)));
      fill(w_off_[k], static_cast<std::size_t>(cfg_.feature_maps) * fan_in, a);
      std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(b_off_[k]), cfg_.feature_maps, 0.0);
    }
    fill(o_off_, context_rows_ * dim(), 0.5 / static_cast<double>(dim()));
  }

  /// Subword ids of a mention; unknown subwords become padding (-1) in place.
  /// Sets `truncated` when the mention exceeded max_len.
  std::vector<int> subword_ids(std::string_view mention, bool* truncated = nullptr) const {
    auto units = cnn_subwords(mention);
    if (truncated) *truncated = units.size() > cfg_.max_len;
    if (units.size() > cfg_.max_len) units.resize(cfg_.max_len);
    std::vector<int> ids;
    for (const auto& u : units) {
      auto it = subword_index_.find(u);
      ids.push_back(it == subword_index_.end() ? -1 : it->second);
    }
    return ids;
  }

  Vector encode_ids(const std::vector<int>& ids) const {
    Forward f;
    forward(ids, f);
    return f.pooled;
  }

  /// Always yields a finite vector; a mention with no known subword encodes
  /// the all-padding input.
  std::optional<Vector> embed(std::string_view mention) const override {
    if (mention.empty()) throw InvalidArgument("encode_mention: empty mention");
    return encode_ids(subword_ids(mention));
  }

  double loss(const CnnExample& ex) const {
    Forward f;
    forward(ex.subwords, f);
    return loss_from(f.pooled, ex);
  }

  /// Loss and its gradient with respect to every parameter (dense, same layout
  /// as parameters()).
  double loss_and_gradient(const CnnExample& ex, std::vector<double>& grad) const {
    grad.assign(params_.size(), 0.0);
    return backward(ex, [&](std::size_t off, double g) { grad[off] += g; });
  }

  /// One SGD step; returns the loss before the step.
  double sgd_step(const CnnExample& ex, double lr) {
    return backward(ex, [&](std::size_t off, double g) { params_[off] -= lr * g; });
  }

  json to_json() const {
    json j;
    j["format"] = "schema-forge-cnn";
    j["version"] = 1;
    j["config"] = {{"widths", cfg_.widths}, {"feature_maps", cfg_.feature_maps}, {"d_in", cfg_.d_in}, {"max_len", cfg_.max_len}};
    j["subwords"] = subwords_;
    // The output table only matters for training and is not persisted.
    j["parameters"] = std::vector<double>(params_.begin(), params_.begin() + static_cast<std::ptrdiff_t>(o_off_));
    return j;
  }

  static SubwordCnnEncoder from_json(const json& j) {
    if (j.value("format", "") != "schema-forge-cnn") throw ParseError("not a CNN encoder file", 0);
    if (j.value("version", 0) != 1) throw ParseError("unsupported CNN encoder version", 0);
    CnnConfig cfg;
    cfg.widths = j.at("config").at("widths").get<std::vector<int>>();
    cfg.feature_maps = j.at("config").at("feature_maps").get<int>();
    cfg.d_in = j.at("config").at("d_in").get<std::size_t>();
    cfg.max_len = j.at("config").at("max_len").get<std::size_t>();
    SubwordCnnEncoder e(cfg, j.at("subwords").get<std::vector<std::string>>(), 0);
    auto p = j.at("parameters").get<std::vector<double>>();
    if (p.size() != e.params_.size()) throw ParseError("CNN encoder parameter count mismatch", 0);
    e.params_ = std::move(p);
    return e;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw MissingFile(path);
    out << to_json().dump() << '\n';
  }

  static SubwordCnnEncoder load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path);
    return from_json(json::parse(in));
  }

 private:
  struct Forward {
    std::size_t len = 0;                  // padded length
    std::vector<int> ids;                 // -1 marks padding
    std::vector<std::vector<double>> h;   // per width: positions x maps, post-tanh
    std::vector<std::vector<int>> arg;    // per width: argmax position per map
    Vector pooled;
  };

  void layout() {
    std::size_t off = subwords_.size() * cfg_.d_in;
    w_off_.clear();
    b_off_.clear();
    for (int w : cfg_.widths) {
      w_off_.push_back(off);
      off += static_cast<std::size_t>(cfg_.feature_maps) * static_cast<std::size_t>(w) * cfg_.d_in;
      b_off_.push_back(off);
      off += static_cast<std::size_t>(cfg_.feature_maps);
    }
    o_off_ = off;
    params_.assign(off + context_rows_ * dim(), 0.0);
  }

  const double* subword_row(int id) const { return &params_[static_cast<std::size_t>(id) * cfg_.d_in]; }

  void forward(const std::vector<int>& ids, Forward& f) const {
    f.ids = ids;
    if (f.ids.size() > cfg_.max_len) f.ids.resize(cfg_.max_len);
    f.len = std::max(f.ids.size(), static_cast<std::size_t>(cfg_.max_width()));
    f.ids.resize(f.len, -1);
    const std::size_t maps = static_cast<std::size_t>(cfg_.feature_maps), d = cfg_.d_in;
    f.h.assign(cfg_.widths.size(), {});
    f.arg.assign(cfg_.widths.size(), std::vector<int>(maps, 0));
    f.pooled.assign(dim(), 0.0);
    for (std::size_t k = 0; k < cfg_.widths.size(); ++k) {
      const std::size_t w = static_cast<std::size_t>(cfg_.widths[k]);
      const std::size_t positions = f.len - w + 1;
      auto& h = f.h[k];
      h.assign(positions * maps, 0.0);
      const double* W = &params_[w_off_[k]];
      const double* b = &params_[b_off_[k]];
      for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t m = 0; m < maps; ++m) {
          double z = b[m];
          const double* wm = W + m * w * d;
          for (std::size_t j = 0; j < w; ++j) {
            int id = f.ids[p + j];
            if (id < 0) continue;
            const double* x = subword_row(id);
            const double* wj = wm + j * d;
            for (std::size_t t = 0; t < d; ++t) z += wj[t] * x[t];
          }
          h[p * maps + m] = std::tanh(z);
        }
      for (std::size_t m = 0; m < maps; ++m) {
        std::size_t best = 0;
        for (std::size_t p = 1; p < positions; ++p)
          if (h[p * maps + m] > h[best * maps + m]) best = p;
        f.arg[k][m] = static_cast<int>(best);
        f.pooled[k * maps + m] = h[best * maps + m];
      }
    }
  }

  double loss_from(const Vector& pt, const CnnExample& ex) const {
    const std::size_t n = dim();
    auto score = [&](std::size_t row) { return dot(pt, {&params_[o_off_ + row * n], n}); };
    double l = -std::log(detail::sigmoid(score(ex.context)));
    for (auto r : ex.negatives) l -= std::log(detail::sigmoid(-score(r)));
    return l;
  }

  // Emits every partial derivative through sink(offset, value). All reads of a
  // parameter happen before the sink may modify it, so the sink can apply
  // updates in place.
  template <class Sink>
  double backward(const CnnExample& ex, Sink&& sink) const {
    if (ex.context >= context_rows_) throw InvalidArgument("cnn: context row out of range");
    for (auto r : ex.negatives)
      if (r >= context_rows_) throw InvalidArgument("cnn: negative row out of range");
    Forward f;
    forward(ex.subwords, f);
    const std::size_t n = dim(), maps = static_cast<std::size_t>(cfg_.feature_maps), d = cfg_.d_in;
    const Vector& pt = f.pooled;

    // dL/ds_c = s(s_c) - 1 and dL/ds_i = s(s_i).
    std::vector<std::pair<std::size_t, double>> rows;
    double l = 0;
    {
      double sc = dot(pt, {&params_[o_off_ + ex.context * n], n});
      l -= std::log(detail::sigmoid(sc));
      rows.emplace_back(ex.context, detail::sigmoid(sc) - 1.0);
      for (auto r : ex.negatives) {
        double si = dot(pt, {&params_[o_off_ + r * n], n});
        l -= std::log(detail::sigmoid(-si));
        rows.emplace_back(r, detail::sigmoid(si));
      }
    }
    Vector dp(n, 0.0);
    for (auto [r, g] : rows)
      for (std::size_t j = 0; j < n; ++j) dp[j] += g * params_[o_off_ + r * n + j];

    // Through max pooling and tanh into the filters and the subword rows.
    std::vector<double> dx(f.len * d, 0.0);
    std::vector<std::tuple<std::size_t, std::size_t, double>> dz_list;  // width, map, dz
    for (std::size_t k = 0; k < cfg_.widths.size(); ++k) {
      const std::size_t w = static_cast<std::size_t>(cfg_.widths[k]);
      const double* W = &params_[w_off_[k]];
      for (std::size_t m = 0; m < maps; ++m) {
        double h = f.pooled[k * maps + m];
        double dz = dp[k * maps + m] * (1.0 - h * h);
        if (dz == 0) continue;
        dz_list.emplace_back(k, m, dz);
        std::size_t p = static_cast<std::size_t>(f.arg[k][m]);
        for (std::size_t j = 0; j < w; ++j) {
          if (f.ids[p + j] < 0) continue;
          const double* wj = W + (m * w + j) * d;
          for (std::size_t t = 0; t < d; ++t) dx[(p + j) * d + t] += dz * wj[t];
        }
      }
    }

    for (auto [r, g] : rows)
      for (std::size_t j = 0; j < n; ++j) sink(o_off_ + r * n + j, g * pt[j]);
    for (auto [k, m, dz] : dz_list) {
      const std::size_t w = static_cast<std::size_t>(cfg_.widths[k]);
      std::size_t p = static_cast<std::size_t>(f.arg[k][m]);
      for (std::size_t j = 0; j < w; ++j) {
        int id = f.ids[p + j];
        if (id < 0) continue;
        const double* x = subword_row(id);
        for (std::size_t t = 0; t < d; ++t) sink(w_off_[k] + (m * w + j) * d + t, dz * x[t]);
      }
      sink(b_off_[k] + m, dz);
    }
    for (std::size_t p = 0; p < f.len; ++p) {
      if (f.ids[p] < 0) continue;
      for (std::size_t t = 0; t < d; ++t)
        if (dx[p * d + t] != 0) sink(static_cast<std::size_t>(f.ids[p]) * d + t, dx[p * d + t]);
    }
    return l;
  }

  CnnConfig cfg_;
  std::vector<std::string> subwords_;
  std::unordered_map<std::string, int> subword_index_;
  std::size_t context_rows_ = 0;
  std::vector<std::size_t> w_off_, b_off_;
  std::size_t o_off_ = 0;
  std::vector<double> params_;
};

struct TrainedCnn {
  SubwordCnnEncoder encoder;
  /// Mean loss on the held-out examples before training and after each epoch.
  std::vector<double> heldout_loss;
  std::vector<std::string> warnings;
};

/// Trains the encoder on every mention item of the streams; contexts are the
/// surrounding stream items. One stream in twenty (when there are at least
/// twenty) is held out to track the loss.
inline TrainedCnn train_cnn_encoder(const std::vector<MentionStream>& streams, const CnnConfig& cfg) {
  cfg.validate();
  std::size_t mentions = 0;
  for (const auto& s : streams)
    for (const auto& it : s) mentions += it.is_mention();
  if (streams.empty() || mentions == 0) throw InvalidArgument("train_cnn_encoder: no mentions in streams");

  detail::Vocabulary ctx;
  std::vector<std::vector<std::size_t>> ctx_ids(streams.size());
  std::map<std::string, int> subword_set;
  for (std::size_t s = 0; s < streams.size(); ++s)
    for (const auto& it : streams[s]) {
      ctx_ids[s].push_back(ctx.add(it.key()));
      if (it.is_mention())
        for (auto& u : cnn_subwords(it.text)) subword_set.emplace(u, 0);
    }
  std::vector<std::string> subwords;
  for (const auto& [u, _] : subword_set) subwords.push_back(u);

  TrainedCnn out{SubwordCnnEncoder(cfg, subwords, ctx.size()), {}, {}};
  auto& enc = out.encoder;
  enc.initialize(cfg.seed);

  // Target subword ids per mention item, computed once.
  std::size_t truncated = 0;
  std::vector<std::vector<std::vector<int>>> targets(streams.size());
  for (std::size_t s = 0; s < streams.size(); ++s)
    for (const auto& it : streams[s]) {
      bool cut = false;
      targets[s].push_back(it.is_mention() ? enc.subword_ids(it.text, &cut) : std::vector<int>{});
      truncated += cut;
    }
  if (truncated)
    out.warnings.push_back(std::to_string(truncated) + " mention occurrence(s) truncated to " +
                           std::to_string(cfg.max_len) + " subwords");

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  detail::NegativeSampler sampler(ctx.counts, cfg.uniform_negatives ? 0.0 : 0.75);
  auto make_examples = [&](std::size_t s, std::size_t i, std::vector<CnnExample>& sink) {
    for (auto c : detail::sample_contexts(rng, i, i + 1, streams[s].size(), cfg.window, cfg.skip_number)) {
      CnnExample ex{targets[s][i], ctx_ids[s][c], {}};
      if (ex.subwords.size() > 1)
        for (auto& id : ex.subwords)
          if (detail::uniform01(rng) < cfg.subword_dropout) id = -1;
      for (int k = 0; k < cfg.negatives; ++k) {
        auto r = sampler(rng);
        if (r != ex.context) ex.negatives.push_back(r);
      }
      sink.push_back(std::move(ex));
    }
  };
  const bool hold_out = streams.size() >= 20;
  auto held = [&](std::size_t s) { return hold_out && s % 20 == 19; };

  std::vector<CnnExample> heldout;
  for (std::size_t s = 0; s < streams.size(); ++s)
    if (held(s) || !hold_out)
      for (std::size_t i = 0; i < streams[s].size() && heldout.size() < 500; ++i)
        if (streams[s][i].is_mention()) make_examples(s, i, heldout);
  auto heldout_mean = [&] {
    double sum = 0;
    for (const auto& ex : heldout) sum += enc.loss(ex);
    return heldout.empty() ? 0.0 : sum / static_cast<double>(heldout.size());
  };
  out.heldout_loss.push_back(heldout_mean());

  std::vector<std::pair<std::size_t, std::size_t>> centers;
  for (std::size_t s = 0; s < streams.size(); ++s)
    if (!held(s))
      for (std::size_t i = 0; i < streams[s].size(); ++i)
        if (streams[s][i].is_mention()) centers.emplace_back(s, i);

  const double total = static_cast<double>(cfg.epochs) * static_cast<double>(centers.size());
  double step = 0;
  std::vector<CnnExample> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t k = centers.size(); k > 1; --k) std::swap(centers[k - 1], centers[rng() % k]);
    for (auto [s, i] : centers) {
      const double lr = std::max(cfg.learning_rate * (1.0 - step / total), cfg.learning_rate * 1e-4);
      ++step;
      batch.clear();
      make_examples(s, i, batch);
      for (const auto& ex : batch) enc.sgd_step(ex, lr);
    }
    out.heldout_loss.push_back(heldout_mean());
  }
  return out;
}

/// Encodes every distinct mention of the streams into a table.
inline EmbeddingTable encode_table(const SubwordCnnEncoder& enc, const std::vector<MentionStream>& streams) {
  EmbeddingTable t(EmbedMethod::Cnn, enc.dim());
  for (const auto& s : streams)
    for (const auto& it : s)
      if (it.is_mention() && !t.contains(it.text)) t.set(it.text, *enc.embed(it.text));
  return t;
}

}  // namespace schema_forge

#endif
