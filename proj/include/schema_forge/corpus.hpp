#ifndef SCHEMA_FORGE_CORPUS_HPP
#define SCHEMA_FORGE_CORPUS_HPP

// Data model for utterances, intent-role mentions and BIO tag sequences,
// plus JSONL / CoNLL readers and writers.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "schema_forge/error.hpp"

namespace schema_forge {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Intent roles

/// The four coarse intent roles. Enumerator order is the canonical order used
/// when concatenating an intent string.
enum class IntentRole : std::uint8_t { Action = 0, Problem = 1, Argument = 2, Question = 3 };

inline constexpr std::array<IntentRole, 4> kAllRoles = {IntentRole::Action, IntentRole::Problem,
                                                        IntentRole::Argument, IntentRole::Question};

inline constexpr std::size_t role_index(IntentRole r) { return static_cast<std::size_t>(r); }

inline std::string_view role_name(IntentRole r) {
  switch (r) {
    case IntentRole::Action: return "Action";
    case IntentRole::Problem: return "Problem";
    case IntentRole::Argument: return "Argument";
    case IntentRole::Question: return "Question";
  }
  return "?";
}

inline std::optional<IntentRole> parse_role(std::string_view s) {
  for (auto r : kAllRoles)
    if (role_name(r) == s) return r;
  return std::nullopt;
}

inline IntentRole require_role(std::string_view s) {
  if (auto r = parse_role(s)) return *r;
  throw InvalidArgument("unknown intent role: " + std::string(s));
}

// ---------------------------------------------------------------------------
// BIO tags

/// One of the nine BIO tags. The numeric id follows the lexicographic order of
/// the tag names (B-Action, B-Argument, ..., I-Question, O) so that "lowest id"
/// and "alphabetically first" coincide in tie-breaking.
class BioTag {
 public:
  enum class Kind : std::uint8_t { B, I, O };
  static constexpr std::size_t kCount = 9;

  constexpr BioTag() = default;
  constexpr BioTag(Kind kind, IntentRole role) : kind_(kind), role_(kind == Kind::O ? IntentRole::Action : role) {}

  static constexpr BioTag outside() { return BioTag(); }
  static constexpr BioTag begin(IntentRole r) { return BioTag(Kind::B, r); }
  static constexpr BioTag inside(IntentRole r) { return BioTag(Kind::I, r); }

  constexpr Kind kind() const { return kind_; }
  /// Meaningless for O.
  constexpr IntentRole role() const { return role_; }
  constexpr bool is_outside() const { return kind_ == Kind::O; }

  std::size_t id() const {
    if (kind_ == Kind::O) return 8;
    return (kind_ == Kind::I ? 4 : 0) + alpha_rank(role_);
  }

  static BioTag from_id(std::size_t id) {
    if (id >= 8) return outside();
    static constexpr std::array<IntentRole, 4> by_alpha = {IntentRole::Action, IntentRole::Argument,
                                                           IntentRole::Problem, IntentRole::Question};
    return BioTag(id < 4 ? Kind::B : Kind::I, by_alpha[id % 4]);
  }

  std::string name() const {
    if (kind_ == Kind::O) return "O";
    return std::string(kind_ == Kind::B ? "B-" : "I-") + std::string(role_name(role_));
  }

  static std::optional<BioTag> parse(std::string_view s) {
    if (s == "O") return outside();
    if (s.size() < 3 || s[1] != '-') return std::nullopt;
    Kind k;
    if (s[0] == 'B') k = Kind::B;
    else if (s[0] == 'I') k = Kind::I;
    else return std::nullopt;
    auto r = parse_role(s.substr(2));
    if (!r) return std::nullopt;
    return BioTag(k, *r);
  }

  friend constexpr bool operator==(BioTag a, BioTag b) {
    return a.kind_ == b.kind_ && (a.kind_ == Kind::O || a.role_ == b.role_);
  }

 private:
  static constexpr std::size_t alpha_rank(IntentRole r) {
    switch (r) {
      case IntentRole::Action: return 0;
      case IntentRole::Argument: return 1;
      case IntentRole::Problem: return 2;
      case IntentRole::Question: return 3;
    }
    return 0;
  }

  Kind kind_ = Kind::O;
  IntentRole role_ = IntentRole::Action;
};

using TagSequence = std::vector<BioTag>;

/// True when `next` may follow `prev` (nullopt = sequence start) in a valid BIO sequence.
inline bool bio_transition_allowed(std::optional<BioTag> prev, BioTag next) {
  if (next.kind() != BioTag::Kind::I) return true;
  return prev && !prev->is_outside() && prev->role() == next.role();
}

inline bool is_bio_valid(const TagSequence& tags) {
  std::optional<BioTag> prev;
  for (auto t : tags) {
    if (!bio_transition_allowed(prev, t)) return false;
    prev = t;
  }
  return true;
}

/// Promotes every I-x that cannot continue a span of role x to B-x.
/// The identity on valid sequences.
inline TagSequence repair_bio(TagSequence tags) {
  std::optional<BioTag> prev;
  for (auto& t : tags) {
    if (!bio_transition_allowed(prev, t)) t = BioTag::begin(t.role());
    prev = t;
  }
  return tags;
}

// ---------------------------------------------------------------------------
// Utterances and tokenization

/// How tokens are joined back into text.
enum class TokenJoin : std::uint8_t { Space, None };

struct Utterance {
  std::string id;
  std::vector<std::string> tokens;
  std::string raw_text;
  TokenJoin join = TokenJoin::Space;
};

struct TokenizerConfig {
  enum class Mode { Auto, Whitespace, Character };
  /// Auto: whitespace split, falling back to one token per code point for
  /// text that has no whitespace and contains non-ASCII characters.
  Mode mode = Mode::Auto;
};

inline std::vector<std::string> split_utf8_codepoints(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
    len = std::min(len, s.size() - i);
    std::string cp(s.substr(i, len));
    if (!(len == 1 && std::isspace(c))) out.push_back(std::move(cp));
    i += len;
  }
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

struct Tokenized {
  std::vector<std::string> tokens;
  TokenJoin join = TokenJoin::Space;
};

inline Tokenized tokenize(std::string_view text, const TokenizerConfig& cfg = {}) {
  using Mode = TokenizerConfig::Mode;
  if (cfg.mode == Mode::Character) return {split_utf8_codepoints(text), TokenJoin::None};
  auto ws = split_whitespace(text);
  if (cfg.mode == Mode::Auto && ws.size() == 1 &&
      std::any_of(ws[0].begin(), ws[0].end(), [](char c) { return static_cast<unsigned char>(c) >= 0x80; }))
    return {split_utf8_codepoints(text), TokenJoin::None};
  return {std::move(ws), TokenJoin::Space};
}

inline Utterance make_utterance(std::string id, std::string_view text, const TokenizerConfig& cfg = {}) {
  auto t = tokenize(text, cfg);
  return Utterance{std::move(id), std::move(t.tokens), std::string(text), t.join};
}

inline std::string join_tokens(const std::vector<std::string>& tokens, std::size_t first, std::size_t last,
                               TokenJoin join = TokenJoin::Space) {
  std::string out;
  for (std::size_t i = first; i < last; ++i) {
    if (i > first && join == TokenJoin::Space) out += ' ';
    out += tokens[i];
  }
  return out;
}

/// Key used for repository and embedding lookups: ASCII-lowercased, single spaces.
inline std::string normalize_mention(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mentions

/// A span [start, end) of token indices carrying one intent role.
struct Mention {
  std::size_t start = 0;
  std::size_t end = 0;
  IntentRole role = IntentRole::Argument;
  std::string surface;

  friend bool operator==(const Mention&, const Mention&) = default;
};

enum class Provenance : std::uint8_t { Gold, Predicted, External };

struct AnnotatedUtterance {
  Utterance utterance;
  TagSequence tags;
  Provenance provenance = Provenance::Gold;
};

/// Spans only; the input is repaired first so any tag sequence decodes.
inline std::vector<Mention> decode_spans(const TagSequence& raw) {
  auto tags = repair_bio(raw);
  std::vector<Mention> out;
  for (std::size_t i = 0; i < tags.size();) {
    if (tags[i].kind() != BioTag::Kind::B) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < tags.size() && tags[j].kind() == BioTag::Kind::I && tags[j].role() == tags[i].role()) ++j;
    out.push_back(Mention{i, j, tags[i].role(), {}});
    i = j;
  }
  return out;
}

inline std::vector<Mention> decode_bio(const TagSequence& tags, const Utterance& u) {
  if (tags.size() != u.tokens.size())
    throw InvalidArgument("decode_bio: " + std::to_string(tags.size()) + " tags for " +
                          std::to_string(u.tokens.size()) + " tokens in utterance '" + u.id + "'");
  auto out = decode_spans(tags);
  for (auto& m : out) m.surface = join_tokens(u.tokens, m.start, m.end, u.join);
  return out;
}

inline std::vector<Mention> mentions_of(const AnnotatedUtterance& a) { return decode_bio(a.tags, a.utterance); }

inline TagSequence encode_bio(const std::vector<Mention>& mentions, std::size_t len) {
  TagSequence tags(len, BioTag::outside());
  std::vector<bool> used(len, false);
  for (const auto& m : mentions) {
    if (m.start >= m.end || m.end > len)
      throw InvalidArgument("encode_bio: span [" + std::to_string(m.start) + "," + std::to_string(m.end) +
                            ") out of range for length " + std::to_string(len));
    for (std::size_t i = m.start; i < m.end; ++i) {
      if (used[i]) throw InvalidArgument("encode_bio: overlapping mentions at token " + std::to_string(i));
      used[i] = true;
      tags[i] = i == m.start ? BioTag::begin(m.role) : BioTag::inside(m.role);
    }
  }
  return tags;
}

// ---------------------------------------------------------------------------
// Utterance JSONL

struct RejectedRecord {
  std::size_t line = 0;
  std::string id;
  std::string reason;
};

struct CorpusReadResult {
  std::vector<Utterance> utterances;
  std::vector<RejectedRecord> rejected;
};

/// Reads `{"id":..., "text":..., "tokens":[...]?}` records, one per line.
/// Blank lines are ignored. Malformed JSON throws ParseError with the line.
inline CorpusReadResult parse_corpus(std::istream& in, const TokenizerConfig& cfg = {}) {
  CorpusReadResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!rec.is_object()) throw ParseError("record is not a JSON object", lineno);
    std::string id = rec.contains("id") && rec["id"].is_string() ? rec["id"].get<std::string>() : "";
    if (id.empty()) {
      result.rejected.push_back({lineno, id, "missing id"});
      continue;
    }
    if (!rec.contains("text") || !rec["text"].is_string()) {
      result.rejected.push_back({lineno, id, "missing text"});
      continue;
    }
    auto text = rec["text"].get<std::string>();
    if (split_whitespace(text).empty()) {
      result.rejected.push_back({lineno, id, "empty text"});
      continue;
    }
    if (rec.contains("tokens") && rec["tokens"].is_array()) {
      Utterance u{id, {}, text, TokenJoin::Space};
      for (const auto& t : rec["tokens"]) {
        if (!t.is_string()) throw ParseError("tokens must be strings", lineno);
        u.tokens.push_back(t.get<std::string>());
      }
      if (u.tokens.empty()) {
        result.rejected.push_back({lineno, id, "empty tokens"});
        continue;
      }
      if (text.find(' ') == std::string::npos && u.tokens.size() > 1) u.join = TokenJoin::None;
      result.utterances.push_back(std::move(u));
    } else {
      result.utterances.push_back(make_utterance(id, text, cfg));
    }
  }
  return result;
}

inline CorpusReadResult parse_corpus(const std::string& path, const TokenizerConfig& cfg = {}) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  return parse_corpus(in, cfg);
}

inline void write_corpus_jsonl(std::ostream& out, const std::vector<Utterance>& utterances) {
  for (const auto& u : utterances) {
    json rec = {{"id", u.id}, {"text", u.raw_text}, {"tokens", u.tokens}};
    out << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// CoNLL two-column annotations
//
// Blocks are separated by blank lines. An optional `# id = <id>` comment line
// before a block names the utterance; otherwise ids are `conll-<n>`.

struct BioReadResult {
  std::vector<AnnotatedUtterance> utterances;
  std::vector<std::string> warnings;
  std::size_t repaired = 0;
};

inline BioReadResult parse_bio(std::istream& in, Provenance provenance = Provenance::Gold) {
  BioReadResult result;
  std::string line;
  std::size_t lineno = 0;
  std::size_t block_start = 0;
  std::string pending_id;
  std::vector<std::string> tokens;
  TagSequence tags;

  auto flush = [&] {
    if (tokens.empty()) {
      if (!pending_id.empty())
        result.warnings.push_back("line " + std::to_string(block_start) + ": empty block '" + pending_id +
                                  "' skipped");
      pending_id.clear();
      return;
    }
    AnnotatedUtterance a;
    a.utterance.id = pending_id.empty() ? "conll-" + std::to_string(result.utterances.size() + 1) : pending_id;
    a.utterance.tokens = std::move(tokens);
    a.utterance.raw_text = join_tokens(a.utterance.tokens, 0, a.utterance.tokens.size());
    a.tags = repair_bio(tags);
    if (!(a.tags == tags)) ++result.repaired;
    a.provenance = provenance;
    result.utterances.push_back(std::move(a));
    tokens.clear();
    tags.clear();
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
      block_start = lineno;
      continue;
    }
    if (line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected token<TAB>tag", lineno);
    auto tag_str = line.substr(tab + 1);
    auto tag = BioTag::parse(tag_str);
    if (!tag) throw ParseError("unknown tag '" + tag_str + "'", lineno);
    if (tokens.empty()) block_start = lineno;
    tokens.push_back(line.substr(0, tab));
    tags.push_back(*tag);
  }
  flush();
  return result;
}

inline BioReadResult parse_bio(const std::string& path, Provenance provenance = Provenance::Gold) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  return parse_bio(in, provenance);
}

inline void write_bio(std::ostream& out, const std::vector<AnnotatedUtterance>& data) {
  for (const auto& a : data) {
    if (a.tags.size() != a.utterance.tokens.size())
      throw InvalidArgument("write_bio: length mismatch in utterance '" + a.utterance.id + "'");
    out << "# id = " << a.utterance.id << '\n';
    for (std::size_t i = 0; i < a.tags.size(); ++i) out << a.utterance.tokens[i] << '\t' << a.tags[i].name() << '\n';
    out << '\n';
  }
}

}  // namespace schema_forge

#endif
