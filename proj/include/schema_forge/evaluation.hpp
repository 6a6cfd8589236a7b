#ifndef SCHEMA_FORGE_EVALUATION_HPP
#define SCHEMA_FORGE_EVALUATION_HPP

// Token-level role P/R/F1, intent macro-F1, slot P/R/F1 and entropy-based
// clustering scores (homogeneity, completeness, v-measure; natural log).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "schema_forge/clustering.hpp"
#include "schema_forge/corpus.hpp"

namespace schema_forge {

struct Prf {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t support = 0;
};

inline double harmonic_f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline Prf prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  Prf s;
  s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = harmonic_f1(s.precision, s.recall);
  s.support = tp + fn;
  return s;
}

struct PrfReport {
  std::map<std::string, Prf> per_class;
  /// Support-weighted mean of the per-class scores.
  Prf weighted;
  /// Unweighted mean of the per-class scores.
  Prf macro;

  json to_json() const {
    auto one = [](const Prf& p) {
      return json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}, {"support", p.support}};
    };
    json classes = json::object();
    for (const auto& [k, v] : per_class) classes[k] = one(v);
    return {{"classes", classes}, {"weighted", one(weighted)}, {"macro", one(macro)}};
  }

  std::string to_table() const {
    std::size_t w = 8;
    for (const auto& [k, _] : per_class) w = std::max(w, k.size());
    std::ostringstream out;
    char buf[160];
    auto row = [&](const std::string& name, const Prf& p) {
      std::snprintf(buf, sizeof buf, "%-*s  %9.4f  %9.4f  %9.4f  %8zu\n", static_cast<int>(w), name.c_str(), p.precision,
                    p.recall, p.f1, p.support);
      out << buf;
    };
    std::snprintf(buf, sizeof buf, "%-*s  %9s  %9s  %9s  %8s\n", static_cast<int>(w), "class", "precision", "recall", "f1",
                  "support");
    out << buf;
    for (const auto& [k, v] : per_class) row(k, v);
    row("macro", macro);
    row("weighted", weighted);
    return out.str();
  }
};

namespace detail {

inline void finish_report(PrfReport& r) {
  std::size_t total = 0;
  for (const auto& [_, p] : r.per_class) total += p.support;
  const double n = static_cast<double>(r.per_class.size());
  for (const auto& [_, p] : r.per_class) {
    if (n > 0) {
      r.macro.precision += p.precision / n;
      r.macro.recall += p.recall / n;
      r.macro.f1 += p.f1 / n;
    }
    if (total > 0) {
      const double wt = static_cast<double>(p.support) / static_cast<double>(total);
      r.weighted.precision += wt * p.precision;
      r.weighted.recall += wt * p.recall;
      r.weighted.f1 += wt * p.f1;
    }
  }
  r.macro.support = r.weighted.support = total;
}

}  // namespace detail

/// Per-role scores over tokens, B and I collapsed to their role; O is not a class.
inline PrfReport token_prf(const std::vector<TagSequence>& gold, const std::vector<TagSequence>& pred) {
  if (gold.size() != pred.size()) throw InvalidArgument("token_prf: sequence count mismatch");
  std::map<IntentRole, std::array<std::size_t, 3>> c;  // tp, fp, fn
  for (auto r : kAllRoles) c[r] = {0, 0, 0};
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].size() != pred[s].size())
      throw InvalidArgument("token_prf: length mismatch in sequence " + std::to_string(s));
    for (std::size_t i = 0; i < gold[s].size(); ++i) {
      const auto g = gold[s][i], p = pred[s][i];
      if (!g.is_outside() && !p.is_outside() && g.role() == p.role()) {
        ++c[g.role()][0];
        continue;
      }
      if (!p.is_outside()) ++c[p.role()][1];
      if (!g.is_outside()) ++c[g.role()][2];
    }
  }
  PrfReport r;
  for (auto role : kAllRoles) r.per_class[std::string(role_name(role))] = prf_from_counts(c[role][0], c[role][1], c[role][2]);
  detail::finish_report(r);
  return r;
}

inline PrfReport token_prf(const TagSequence& gold, const TagSequence& pred) {
  return token_prf(std::vector<TagSequence>{gold}, std::vector<TagSequence>{pred});
}

/// Per-intent scores; the macro average runs over the classes present in gold.
inline PrfReport intent_macro_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
  if (gold.empty()) throw InvalidArgument("intent_macro_f1: empty input");
  if (gold.size() != pred.size()) throw InvalidArgument("intent_macro_f1: length mismatch");
  std::map<std::string, std::array<std::size_t, 3>> c;
  for (const auto& g : gold) c[g];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) {
      ++c[gold[i]][0];
      continue;
    }
    ++c[gold[i]][2];
    auto it = c.find(pred[i]);
    if (it != c.end()) ++it->second[1];
  }
  PrfReport r;
  for (const auto& [k, v] : c) r.per_class[k] = prf_from_counts(v[0], v[1], v[2]);
  detail::finish_report(r);
  return r;
}

/// (utterance id, concept name, surface) triple.
using SlotTuple = std::tuple<std::string, std::string, std::string>;

/// Exact-match slot scores. Both sets empty counts as perfect agreement.
inline Prf slot_prf(const std::set<SlotTuple>& gold, const std::set<SlotTuple>& pred) {
  if (gold.empty() && pred.empty()) return {1.0, 1.0, 1.0, 0};
  std::size_t hit = 0;
  for (const auto& p : pred) hit += gold.count(p);
  return prf_from_counts(hit, pred.size() - hit, gold.size() - hit);
}

struct ClusteringReport {
  double homogeneity = 1;
  double completeness = 1;
  double v_measure = 1;

  json to_json() const { return {{"homogeneity", homogeneity}, {"completeness", completeness}, {"v_measure", v_measure}}; }
};

/// Works on any label types with operator<.
template <class G, class P>
ClusteringReport clustering_scores(const std::vector<G>& gold, const std::vector<P>& pred) {
  if (gold.size() != pred.size()) throw InvalidArgument("clustering_scores: length mismatch");
  ClusteringReport r;
  if (gold.empty()) return r;
  const double n = static_cast<double>(gold.size());
  std::map<G, double> nc;
  std::map<P, double> nk;
  std::map<std::pair<G, P>, double> nck;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++nc[gold[i]];
    ++nk[pred[i]];
    ++nck[{gold[i], pred[i]}];
  }
  double hc = 0, hk = 0, hc_k = 0, hk_c = 0;
  for (const auto& [_, v] : nc) hc -= v / n * std::log(v / n);
  for (const auto& [_, v] : nk) hk -= v / n * std::log(v / n);
  for (const auto& [ck, v] : nck) {
    hc_k -= v / n * std::log(v / nk.at(ck.second));
    hk_c -= v / n * std::log(v / nc.at(ck.first));
  }
  r.homogeneity = hc > 0 ? 1.0 - hc_k / hc : 1.0;
  r.completeness = hk > 0 ? 1.0 - hk_c / hk : 1.0;
  r.homogeneity = std::clamp(r.homogeneity, 0.0, 1.0);
  r.completeness = std::clamp(r.completeness, 0.0, 1.0);
  r.v_measure = harmonic_f1(r.homogeneity, r.completeness);
  return r;
}

template <class G>
ClusteringReport clustering_scores(const std::vector<G>& gold, const ClusterAssignment& a) {
  return clustering_scores(gold, a.labels);
}

}  // namespace schema_forge

#endif
