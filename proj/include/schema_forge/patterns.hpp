#ifndef SCHEMA_FORGE_PATTERNS_HPP
#define SCHEMA_FORGE_PATTERNS_HPP

// Intent-role pattern mining: Apriori over per-utterance role sets drawn from
// the four-role universe, with an exhaustive counter for cross-checking.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "schema_forge/corpus.hpp"

namespace schema_forge {

/// Order-irrelevant set of intent roles, stored as a 4-bit mask.
class RoleSet {
 public:
  constexpr RoleSet() = default;
  constexpr explicit RoleSet(std::uint8_t mask) : mask_(mask & 0xF) {}
  RoleSet(std::initializer_list<IntentRole> roles) {
    for (auto r : roles) insert(r);
  }

  constexpr std::uint8_t mask() const { return mask_; }
  constexpr bool empty() const { return mask_ == 0; }
  int size() const { return std::popcount(mask_); }
  constexpr bool contains(IntentRole r) const { return mask_ & bit(r); }
  constexpr bool contains(RoleSet other) const { return (mask_ & other.mask_) == other.mask_; }
  void insert(IntentRole r) { mask_ |= bit(r); }

  std::vector<IntentRole> roles() const {
    std::vector<IntentRole> out;
    for (auto r : kAllRoles)
      if (contains(r)) out.push_back(r);
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (auto r : roles()) out.emplace_back(role_name(r));
    return out;
  }

  std::string to_string() const {
    std::string s = "{";
    for (const auto& n : names()) s += (s.size() > 1 ? "," : "") + n;
    return s + "}";
  }

  static RoleSet from_names(const std::vector<std::string>& names) {
    RoleSet s;
    for (const auto& n : names) s.insert(require_role(n));
    return s;
  }

  friend constexpr bool operator==(RoleSet, RoleSet) = default;
  friend constexpr auto operator<=>(RoleSet a, RoleSet b) { return a.mask_ <=> b.mask_; }

 private:
  static constexpr std::uint8_t bit(IntentRole r) { return static_cast<std::uint8_t>(1u << role_index(r)); }
  std::uint8_t mask_ = 0;
};

inline constexpr std::size_t kCandidatePatternCount = 15;

struct Pattern {
  RoleSet roles;
  double support = 0;
  double confidence = 0;
  std::size_t count = 0;

  friend bool operator==(const Pattern&, const Pattern&) = default;
};

struct PatternSet {
  std::vector<Pattern> patterns;
  double min_support = 0;
  double min_confidence = 0;
  std::size_t corpus_size = 0;

  bool contains(RoleSet s) const {
    return std::any_of(patterns.begin(), patterns.end(), [&](const Pattern& p) { return p.roles == s; });
  }

  const Pattern* find(RoleSet s) const {
    for (const auto& p : patterns)
      if (p.roles == s) return &p;
    return nullptr;
  }

  json to_json() const {
    json ps = json::array();
    for (const auto& p : patterns)
      ps.push_back({{"roles", p.roles.names()}, {"support", p.support}, {"confidence", p.confidence}, {"count", p.count}});
    return {{"min_support", min_support}, {"min_confidence", min_confidence}, {"corpus_size", corpus_size}, {"patterns", ps}};
  }

  static PatternSet from_json(const json& j) {
    PatternSet s;
    s.min_support = j.at("min_support").get<double>();
    s.min_confidence = j.at("min_confidence").get<double>();
    s.corpus_size = j.at("corpus_size").get<std::size_t>();
    for (const auto& p : j.at("patterns"))
      s.patterns.push_back({RoleSet::from_names(p.at("roles").get<std::vector<std::string>>()), p.at("support").get<double>(),
                            p.at("confidence").get<double>(), p.value("count", std::size_t{0})});
    return s;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw MissingFile(path);
    out << to_json().dump(2) << '\n';
  }

  static PatternSet load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path);
    return from_json(json::parse(in));
  }
};

inline RoleSet role_set_of(const std::vector<Mention>& mentions) {
  RoleSet s;
  for (const auto& m : mentions) s.insert(m.role);
  return s;
}

inline RoleSet role_set_of(const AnnotatedUtterance& a) { return role_set_of(decode_spans(a.tags)); }

struct RoleSetExtraction {
  std::vector<RoleSet> role_sets;
  /// Utterances without any mention.
  std::size_t skipped = 0;
};

inline RoleSetExtraction extract_role_sets(const std::vector<AnnotatedUtterance>& tagged) {
  RoleSetExtraction out;
  for (const auto& a : tagged) {
    auto s = role_set_of(a);
    if (s.empty()) ++out.skipped;
    else out.role_sets.push_back(s);
  }
  return out;
}

namespace detail {

// Confidence of an itemset: the strongest single-antecedent rule,
// max over r in S of count(S) / count({r}).
template <class CountOf>
double itemset_confidence(RoleSet s, std::size_t count, CountOf&& count_of) {
  double best = 0;
  for (auto r : s.roles()) {
    std::size_t cr = count_of(RoleSet{r});
    if (cr > 0) best = std::max(best, static_cast<double>(count) / static_cast<double>(cr));
  }
  return best;
}

inline void sort_patterns(std::vector<Pattern>& ps) {
  std::sort(ps.begin(), ps.end(), [](const Pattern& a, const Pattern& b) {
    if (a.roles.size() != b.roles.size()) return a.roles.size() < b.roles.size();
    if (a.count != b.count) return a.count > b.count;
    return a.roles < b.roles;
  });
}

}  // namespace detail

/// Level-wise Apriori over the four-role universe. Itemsets are kept when
/// support >= min_support; of those, itemsets whose confidence is below
/// min_confidence are dropped from the output. Sorted by (size, support desc).
inline PatternSet apriori(std::span<const RoleSet> role_sets, double min_support = 0.05, double min_confidence = 0.1) {
  if (role_sets.empty()) throw InvalidArgument("apriori: empty role-set corpus");
  const double n = static_cast<double>(role_sets.size());
  auto count = [&](RoleSet c) {
    std::size_t k = 0;
    for (auto s : role_sets) k += s.contains(c);
    return k;
  };

  std::map<RoleSet, std::size_t> frequent;
  std::vector<RoleSet> level;
  for (auto r : kAllRoles) {
    RoleSet c{r};
    std::size_t k = count(c);
    if (static_cast<double>(k) / n >= min_support) {
      frequent[c] = k;
      level.push_back(c);
    }
  }
  while (!level.empty()) {
    std::set<RoleSet> candidates;
    for (std::size_t i = 0; i < level.size(); ++i)
      for (std::size_t j = i + 1; j < level.size(); ++j) {
        RoleSet u(level[i].mask() | level[j].mask());
        if (u.size() != level[i].size() + 1) continue;
        bool all_subsets_frequent = true;
        for (auto r : u.roles())
          if (!frequent.count(RoleSet(u.mask() & ~RoleSet{r}.mask()))) all_subsets_frequent = false;
        if (all_subsets_frequent) candidates.insert(u);
      }
    level.clear();
    for (auto c : candidates) {
      std::size_t k = count(c);
      if (static_cast<double>(k) / n >= min_support) {
        frequent[c] = k;
        level.push_back(c);
      }
    }
  }

  PatternSet out{{}, min_support, min_confidence, role_sets.size()};
  for (auto [s, k] : frequent) {
    double conf = detail::itemset_confidence(s, k, [&](RoleSet r) { return frequent.at(r); });
    if (conf < min_confidence) continue;
    out.patterns.push_back({s, static_cast<double>(k) / n, conf, k});
  }
  detail::sort_patterns(out.patterns);
  return out;
}

/// Direct support count over all 15 non-empty role combinations.
inline PatternSet brute_force_patterns(std::span<const RoleSet> role_sets, double min_support,
                                       double min_confidence = 0.0) {
  if (role_sets.empty()) throw InvalidArgument("brute_force_patterns: empty role-set corpus");
  std::array<std::size_t, 16> counts{};
  for (unsigned mask = 1; mask < 16; ++mask)
    for (auto s : role_sets)
      if ((s.mask() & mask) == mask) ++counts[mask];
  const double n = static_cast<double>(role_sets.size());
  PatternSet out{{}, min_support, min_confidence, role_sets.size()};
  for (unsigned mask = 1; mask < 16; ++mask) {
    double support = static_cast<double>(counts[mask]) / n;
    if (support < min_support) continue;
    RoleSet s(static_cast<std::uint8_t>(mask));
    double conf = detail::itemset_confidence(s, counts[mask], [&](RoleSet r) { return counts[r.mask()]; });
    if (conf < min_confidence) continue;
    out.patterns.push_back({s, support, conf, counts[mask]});
  }
  detail::sort_patterns(out.patterns);
  return out;
}

/// Fraction of role sets that equal some retained pattern. Empty role sets
/// (utterances without mentions) never match.
inline double pattern_coverage(const PatternSet& patterns, std::span<const RoleSet> role_sets) {
  if (role_sets.empty()) return 0.0;
  std::size_t hit = 0;
  for (auto s : role_sets) hit += !s.empty() && patterns.contains(s);
  return static_cast<double>(hit) / static_cast<double>(role_sets.size());
}

/// Folds each pattern with its Argument-extended twin into one display form,
/// e.g. {Action} and {Action,Argument} become "Action-(Argument)".
inline std::vector<std::string> typical_patterns(const PatternSet& patterns) {
  std::map<std::uint8_t, bool> families;  // roles without Argument -> has Argument variant
  const RoleSet arg{IntentRole::Argument};
  for (const auto& p : patterns.patterns) {
    RoleSet base(p.roles.mask() & ~arg.mask());
    families[base.mask()] |= p.roles.contains(IntentRole::Argument);
  }
  std::vector<std::string> out;
  for (auto [mask, with_arg] : families) {
    std::string s;
    for (auto r : kAllRoles) {
      std::string part;
      if (r == IntentRole::Argument) {
        if (with_arg) part = "(Argument)";
      } else if (RoleSet(mask).contains(r)) {
        part = std::string(role_name(r));
      }
      if (part.empty()) continue;
      if (!s.empty()) s += '-';
      s += part;
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace schema_forge

#endif
