#ifndef SCHEMA_FORGE_IRL_HPP
#define SCHEMA_FORGE_IRL_HPP

// Intent-role labeling: a structured averaged perceptron over the nine BIO
// tags with constrained Viterbi decoding, a rule-based tagger driven by POS
// tags, and import of externally produced tag files.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "schema_forge/corpus.hpp"

namespace schema_forge {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct TaggerConfig {
  int epochs = 10;
  /// Token-context radius for window features.
  int window = 2;
  std::uint64_t seed = 0;
  bool averaging = true;
  int max_affix = 3;

  void validate() const {
    if (epochs < 1) throw InvalidArgument("tagger epochs must be >= 1");
    if (window < 0) throw InvalidArgument("tagger window must be >= 0");
    if (max_affix < 0) throw InvalidArgument("tagger max_affix must be >= 0");
  }
};

using TagScores = std::array<double, BioTag::kCount>;

class TaggerModel {
 public:
  TaggerModel() : TaggerModel(TaggerConfig{}) {}

  explicit TaggerModel(const TaggerConfig& cfg) : window_(cfg.window), max_affix_(cfg.max_affix) {
    for (std::size_t p = 0; p < BioTag::kCount; ++p) {
      start_[p] = bio_transition_allowed(std::nullopt, BioTag::from_id(p)) ? 0.0 : kNegInf;
      for (std::size_t n = 0; n < BioTag::kCount; ++n)
        transitions_[p][n] = bio_transition_allowed(BioTag::from_id(p), BioTag::from_id(n)) ? 0.0 : kNegInf;
    }
  }

  int window() const { return window_; }
  int max_affix() const { return max_affix_; }
  std::size_t feature_count() const { return weights_.size(); }

  std::vector<std::string> features(const std::vector<std::string>& tokens, std::size_t i) const {
    std::vector<std::string> f;
    f.reserve(12 + 2 * static_cast<std::size_t>(window_));
    const std::string low = normalize_mention(tokens[i]);
    // No bias feature: start/transition scores already carry the tag prior, and
    // a shared bias lets one update on a single example undo its own fit.
    f.push_back("w=" + low);
    auto cps = split_utf8_codepoints(low);
    for (int k = 1; k <= max_affix_ && static_cast<std::size_t>(k) <= cps.size(); ++k) {
      std::string pre, suf;
      for (int j = 0; j < k; ++j) {
        pre += cps[static_cast<std::size_t>(j)];
        suf += cps[cps.size() - static_cast<std::size_t>(k - j)];
      }
      f.push_back("p" + std::to_string(k) + "=" + pre);
      f.push_back("s" + std::to_string(k) + "=" + suf);
    }
    for (int off = -window_; off <= window_; ++off) {
      if (off == 0) continue;
      auto j = static_cast<std::ptrdiff_t>(i) + off;
      // Padding is index-specific so boundary features of neighbouring tokens never coincide.
      const auto n = static_cast<std::ptrdiff_t>(tokens.size());
      std::string w = j < 0    ? "<s" + std::to_string(j) + ">"
                      : j >= n ? "</s+" + std::to_string(j - n + 1) + ">"
                               : normalize_mention(tokens[static_cast<std::size_t>(j)]);
      f.push_back("w[" + std::to_string(off) + "]=" + w);
    }
    if (!low.empty() && std::all_of(low.begin(), low.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      f.emplace_back("digit");
    if (!low.empty() && std::all_of(low.begin(), low.end(), [](char c) { return std::ispunct(static_cast<unsigned char>(c)); }))
      f.emplace_back("punct");
    if (std::isupper(static_cast<unsigned char>(tokens[i][0]))) f.emplace_back("cap");
    return f;
  }

  std::vector<TagScores> emissions(const std::vector<std::string>& tokens) const {
    std::vector<TagScores> out(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      out[i].fill(0.0);
      for (const auto& name : features(tokens, i)) {
        auto it = weights_.find(name);
        if (it == weights_.end()) continue;
        for (std::size_t t = 0; t < BioTag::kCount; ++t) out[i][t] += it->second[t];
      }
    }
    return out;
  }

  /// Highest-scoring tag path. Ties resolve to the lowest tag id, i.e. the
  /// alphabetically first tag name.
  TagSequence viterbi(const std::vector<TagScores>& em) const {
    const std::size_t n = em.size();
    if (n == 0) return {};
    std::vector<TagScores> score(n);
    std::vector<std::array<std::uint8_t, BioTag::kCount>> back(n);
    for (std::size_t t = 0; t < BioTag::kCount; ++t) score[0][t] = start_[t] + em[0][t];
    for (std::size_t i = 1; i < n; ++i) {
      for (std::size_t t = 0; t < BioTag::kCount; ++t) {
        double best = kNegInf;
        std::size_t arg = 0;
        for (std::size_t p = 0; p < BioTag::kCount; ++p) {
          double s = score[i - 1][p] + transitions_[p][t];
          if (s > best) {
            best = s;
            arg = p;
          }
        }
        score[i][t] = best + em[i][t];
        back[i][t] = static_cast<std::uint8_t>(arg);
      }
    }
    std::size_t last = 0;
    for (std::size_t t = 1; t < BioTag::kCount; ++t)
      if (score[n - 1][t] > score[n - 1][last]) last = t;
    TagSequence path(n);
    for (std::size_t i = n; i-- > 0;) {
      path[i] = BioTag::from_id(last);
      if (i) last = back[i][last];
    }
    return path;
  }

  TagSequence predict(const std::vector<std::string>& tokens) const { return viterbi(emissions(tokens)); }

  /// Total model score of a tag path (−inf for structurally invalid paths).
  double path_score(const std::vector<std::string>& tokens, const TagSequence& tags) const {
    if (tags.size() != tokens.size()) throw InvalidArgument("path_score: length mismatch");
    auto em = emissions(tokens);
    double s = 0;
    for (std::size_t i = 0; i < tags.size(); ++i) {
      s += em[i][tags[i].id()];
      s += i == 0 ? start_[tags[0].id()] : transitions_[tags[i - 1].id()][tags[i].id()];
    }
    return s;
  }

  json to_json() const {
    auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json j;
    j["format"] = "schema-forge-tagger";
    j["version"] = 1;
    j["config"] = {{"window", window_}, {"max_affix", max_affix_}};
    json labels = json::array();
    for (std::size_t t = 0; t < BioTag::kCount; ++t) labels.push_back(BioTag::from_id(t).name());
    j["labels"] = labels;
    json start = json::array(), trans = json::array();
    for (std::size_t p = 0; p < BioTag::kCount; ++p) {
      start.push_back(finite_or_null(start_[p]));
      json row = json::array();
      for (std::size_t n = 0; n < BioTag::kCount; ++n) row.push_back(finite_or_null(transitions_[p][n]));
      trans.push_back(row);
    }
    j["start"] = start;
    j["transitions"] = trans;
    // Sorted keys keep the file byte-stable across runs.
    std::vector<std::string> keys;
    keys.reserve(weights_.size());
    for (const auto& [k, _] : weights_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    json feats = json::object();
    for (const auto& k : keys) feats[k] = weights_.at(k);
    j["features"] = feats;
    return j;
  }

  static TaggerModel from_json(const json& j) {
    if (j.value("format", "") != "schema-forge-tagger") throw ParseError("not a tagger model file", 0);
    if (j.value("version", 0) != 1) throw ParseError("unsupported tagger model version", 0);
    TaggerConfig cfg;
    cfg.window = j.at("config").at("window").get<int>();
    cfg.max_affix = j.at("config").at("max_affix").get<int>();
    TaggerModel m(cfg);
    const auto& labels = j.at("labels");
    for (std::size_t t = 0; t < BioTag::kCount; ++t)
      if (labels.at(t).get<std::string>() != BioTag::from_id(t).name()) throw ParseError("label order mismatch", 0);
    auto read = [](const json& v) { return v.is_null() ? kNegInf : v.get<double>(); };
    for (std::size_t p = 0; p < BioTag::kCount; ++p) {
      m.start_[p] = read(j.at("start").at(p));
      for (std::size_t n = 0; n < BioTag::kCount; ++n) m.transitions_[p][n] = read(j.at("transitions").at(p).at(n));
    }
    for (const auto& [k, v] : j.at("features").items()) m.weights_[k] = v.get<TagScores>();
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw MissingFile(path);
    out << to_json().dump() << '\n';
  }

  static TaggerModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path);
    return from_json(json::parse(in));
  }

 private:
  friend class PerceptronTrainer;

  int window_;
  int max_affix_;
  std::unordered_map<std::string, TagScores> weights_;
  std::array<TagScores, BioTag::kCount> transitions_{};
  TagScores start_{};
};

struct TrainedTagger {
  TaggerModel model;
  /// Token accuracy of the final (averaged) model on the training data.
  double train_accuracy = 0;
};

// Averaged perceptron with the usual "w - u/c" trick: u accumulates c·Δ so the
// running average never has to be materialized during training.
class PerceptronTrainer {
 public:
  explicit PerceptronTrainer(const TaggerConfig& cfg) : cfg_(cfg), model_(cfg) {}

  TrainedTagger train(const std::vector<AnnotatedUtterance>& data) {
    cfg_.validate();
    if (data.empty()) throw InvalidArgument("train_tagger: empty training data");
    for (const auto& a : data) {
      if (a.tags.size() != a.utterance.tokens.size())
        throw InvalidArgument("train_tagger: length mismatch in utterance '" + a.utterance.id + "'");
      if (a.tags.empty()) throw InvalidArgument("train_tagger: empty utterance '" + a.utterance.id + "'");
      if (!is_bio_valid(a.tags)) throw InvalidArgument("train_tagger: invalid BIO sequence in '" + a.utterance.id + "'");
    }

    std::vector<std::vector<std::vector<std::string>>> feats(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) {
      const auto& toks = data[k].utterance.tokens;
      feats[k].resize(toks.size());
      for (std::size_t i = 0; i < toks.size(); ++i) feats[k][i] = model_.features(toks, i);
    }

    std::vector<std::size_t> order(data.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::mt19937_64 rng(cfg_.seed);

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      // Fisher-Yates with a plain modulo draw: reproducible across standard libraries.
      for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng() % k]);
      for (auto k : order) {
        ++clock_;
        const auto& gold = data[k].tags;
        auto pred = model_.viterbi(emissions(feats[k]));
        if (pred == gold) continue;
        update(feats[k], gold, +1.0);
        update(feats[k], pred, -1.0);
      }
    }

    if (cfg_.averaging) average();

    std::size_t correct = 0, total = 0;
    for (const auto& a : data) {
      auto pred = model_.predict(a.utterance.tokens);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == a.tags[i];
      total += pred.size();
    }
    return {std::move(model_), static_cast<double>(correct) / static_cast<double>(total)};
  }

 private:
  std::vector<TagScores> emissions(const std::vector<std::vector<std::string>>& f) const {
    std::vector<TagScores> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      out[i].fill(0.0);
      for (const auto& name : f[i]) {
        auto it = model_.weights_.find(name);
        if (it == model_.weights_.end()) continue;
        for (std::size_t t = 0; t < BioTag::kCount; ++t) out[i][t] += it->second[t];
      }
    }
    return out;
  }

  void update(const std::vector<std::vector<std::string>>& f, const TagSequence& tags, double delta) {
    const double c = static_cast<double>(clock_);
    for (std::size_t i = 0; i < tags.size(); ++i) {
      std::size_t t = tags[i].id();
      for (const auto& name : f[i]) {
        auto& w = model_.weights_[name];
        auto& u = acc_weights_[name];
        w[t] += delta;
        u[t] += c * delta;
      }
      if (i == 0) {
        model_.start_[t] += delta;
        acc_start_[t] += c * delta;
      } else {
        std::size_t p = tags[i - 1].id();
        model_.transitions_[p][t] += delta;
        acc_trans_[p][t] += c * delta;
      }
    }
  }

  void average() {
    const double c = static_cast<double>(clock_ + 1);
    for (auto& [name, w] : model_.weights_) {
      const auto& u = acc_weights_[name];
      for (std::size_t t = 0; t < BioTag::kCount; ++t) w[t] -= u[t] / c;
    }
    for (std::size_t p = 0; p < BioTag::kCount; ++p) {
      if (std::isfinite(model_.start_[p])) model_.start_[p] -= acc_start_[p] / c;
      for (std::size_t n = 0; n < BioTag::kCount; ++n)
        if (std::isfinite(model_.transitions_[p][n])) model_.transitions_[p][n] -= acc_trans_[p][n] / c;
    }
  }

  TaggerConfig cfg_;
  TaggerModel model_;
  std::uint64_t clock_ = 0;
  std::unordered_map<std::string, TagScores> acc_weights_;
  std::array<TagScores, BioTag::kCount> acc_trans_{};
  TagScores acc_start_{};
};

inline TrainedTagger train_tagger(const std::vector<AnnotatedUtterance>& data, const TaggerConfig& cfg = {}) {
  return PerceptronTrainer(cfg).train(data);
}

inline AnnotatedUtterance tag(const TaggerModel& model, const Utterance& u) {
  if (u.tokens.empty()) throw InvalidArgument("tag: empty utterance '" + u.id + "'");
  return AnnotatedUtterance{u, model.predict(u.tokens), Provenance::Predicted};
}

// ---------------------------------------------------------------------------
// POS-rule fallback

struct PosTaggedUtterance {
  Utterance utterance;
  std::vector<std::string> pos;
  std::set<std::string> negation_lexicon;
  std::set<std::string> interrogative_lexicon;
};

inline const std::set<std::string>& default_negation_lexicon() {
  static const std::set<std::string> s = {"not", "no", "never", "cannot", "can't", "don't", "didn't", "won't",
                                          "doesn't", "isn't", "wasn't", "n't", "without", "unable"};
  return s;
}

inline const std::set<std::string>& default_interrogative_lexicon() {
  static const std::set<std::string> s = {"what", "when", "where", "why", "how", "which", "who", "whom", "whose"};
  return s;
}

namespace detail {

inline bool is_noun_pos(const std::string& p) {
  static const std::set<std::string> penn = {"N", "NN", "NNS", "NNP", "NNPS", "NOUN", "PROPN"};
  return penn.count(p) > 0 || (!p.empty() && p[0] == 'n');
}

inline bool is_verb_pos(const std::string& p) {
  static const std::set<std::string> penn = {"V", "VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "VERB"};
  return penn.count(p) > 0 || (!p.empty() && p[0] == 'v');
}

inline bool is_wh_pos(const std::string& p) { return p == "WP" || p == "WP$" || p == "WDT" || p == "WRB"; }

}  // namespace detail

/// Noun runs become Argument, interrogative runs Question, and runs of verbs
/// (with any adjacent negation words) Action, or Problem when a negation word
/// is part of the run. Everything else is O.
inline AnnotatedUtterance pos_rule_tag(const PosTaggedUtterance& p) {
  const auto& toks = p.utterance.tokens;
  if (p.pos.size() != toks.size())
    throw InvalidArgument("pos_rule_tag: " + std::to_string(p.pos.size()) + " POS tags for " +
                          std::to_string(toks.size()) + " tokens");
  enum class Cls { Other, Noun, Verb, Neg, Wh };
  std::vector<Cls> cls(toks.size(), Cls::Other);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    auto low = normalize_mention(toks[i]);
    if (p.interrogative_lexicon.count(low) || detail::is_wh_pos(p.pos[i])) cls[i] = Cls::Wh;
    else if (p.negation_lexicon.count(low)) cls[i] = Cls::Neg;
    else if (detail::is_verb_pos(p.pos[i])) cls[i] = Cls::Verb;
    else if (detail::is_noun_pos(p.pos[i])) cls[i] = Cls::Noun;
  }

  std::vector<Mention> mentions;
  for (std::size_t i = 0; i < toks.size();) {
    std::size_t j = i + 1;
    switch (cls[i]) {
      case Cls::Wh:
      case Cls::Noun:
        while (j < toks.size() && cls[j] == cls[i]) ++j;
        mentions.push_back({i, j, cls[i] == Cls::Wh ? IntentRole::Question : IntentRole::Argument, {}});
        break;
      case Cls::Verb:
      case Cls::Neg: {
        bool has_verb = cls[i] == Cls::Verb, has_neg = cls[i] == Cls::Neg;
        while (j < toks.size() && (cls[j] == Cls::Verb || cls[j] == Cls::Neg)) {
          has_verb |= cls[j] == Cls::Verb;
          has_neg |= cls[j] == Cls::Neg;
          ++j;
        }
        if (has_verb) mentions.push_back({i, j, has_neg ? IntentRole::Problem : IntentRole::Action, {}});
        break;
      }
      case Cls::Other:
        break;
    }
    i = j;
  }
  return AnnotatedUtterance{p.utterance, encode_bio(mentions, toks.size()), Provenance::Predicted};
}

/// Reads token<TAB>POS blocks in the CoNLL layout used for BIO files ("# id = X"
/// names the next block). Lexicons default to the built-in ones.
inline std::vector<PosTaggedUtterance> parse_pos(std::istream& in) {
  std::vector<PosTaggedUtterance> out;
  std::string line, pending_id;
  std::size_t lineno = 0;
  std::vector<std::string> tokens, pos;
  auto flush = [&] {
    if (!tokens.empty()) {
      PosTaggedUtterance p;
      p.utterance.id = pending_id.empty() ? "conll-" + std::to_string(out.size() + 1) : pending_id;
      p.utterance.tokens = std::move(tokens);
      p.utterance.raw_text = join_tokens(p.utterance.tokens, 0, p.utterance.tokens.size());
      p.pos = std::move(pos);
      p.negation_lexicon = default_negation_lexicon();
      p.interrogative_lexicon = default_interrogative_lexicon();
      out.push_back(std::move(p));
    }
    tokens.clear();
    pos.clear();
    pending_id.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
      continue;
    }
    if (line.rfind("# id = ", 0) == 0) {
      flush();
      pending_id = line.substr(7);
      continue;
    }
    if (line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab + 1 == line.size()) throw ParseError("expected token<TAB>POS", lineno);
    tokens.push_back(line.substr(0, tab));
    pos.push_back(line.substr(tab + 1));
  }
  flush();
  return out;
}

inline std::vector<PosTaggedUtterance> parse_pos(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  return parse_pos(in);
}

/// Tags produced by an external tagger, in CoNLL two-column form.
inline std::vector<AnnotatedUtterance> import_tags(const std::string& path) {
  return parse_bio(path, Provenance::External).utterances;
}

inline std::vector<AnnotatedUtterance> import_tags(std::istream& in) {
  return parse_bio(in, Provenance::External).utterances;
}

}  // namespace schema_forge

#endif
