#ifndef SCHEMA_FORGE_CLUSTERING_HPP
#define SCHEMA_FORGE_CLUSTERING_HPP

// Mention clustering: kNN transition matrices, label propagation, K-means
// with k-means++ seeding, and greedy two-level map-equation minimization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "schema_forge/error.hpp"

namespace schema_forge {

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity; 0 when either vector is zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  double na = norm2(a), nb = norm2(b);
  if (na == 0 || nb == 0) return 0;
  return dot(a, b) / (na * nb);
}

inline Vector normalized(std::span<const double> v) {
  Vector out(v.begin(), v.end());
  double n = norm2(v);
  if (n > 0)
    for (auto& x : out) x /= n;
  return out;
}

namespace detail {

// Uniform double in [0, 1) from the top 53 bits; portable, unlike
// std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double plogp(double p) { return p > 0 ? p * std::log(p) : 0.0; }

}  // namespace detail

// ---------------------------------------------------------------------------

enum class ClusterMethod { KMeans, Lpa, MinE, Given };

inline std::string_view method_name(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::KMeans: return "kmeans";
    case ClusterMethod::Lpa: return "lpa";
    case ClusterMethod::MinE: return "mine";
    case ClusterMethod::Given: return "given";
  }
  return "?";
}

struct ClusterAssignment {
  /// Cluster id per item, dense in [0, num_clusters).
  std::vector<std::size_t> labels;
  std::size_t num_clusters = 0;
  ClusterMethod method = ClusterMethod::Given;
  int iterations = 0;

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(num_clusters);
    for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
    return out;
  }
};

/// Renumbers arbitrary labels densely in order of first appearance.
inline ClusterAssignment relabel_dense(const std::vector<std::size_t>& raw, ClusterMethod method, int iterations) {
  ClusterAssignment a;
  a.method = method;
  a.iterations = iterations;
  a.labels.resize(raw.size());
  std::unordered_map<std::size_t, std::size_t> map;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto [it, fresh] = map.try_emplace(raw[i], map.size());
    a.labels[i] = it->second;
  }
  a.num_clusters = map.size();
  return a;
}

// ---------------------------------------------------------------------------
// kNN transition matrix

struct TransitionMatrix {
  struct Row {
    std::vector<std::size_t> cols;
    std::vector<double> vals;
  };
  std::vector<Row> rows;
  std::size_t k = 0;

  std::size_t size() const { return rows.size(); }
  bool isolated(std::size_t i) const { return rows[i].cols.empty(); }

  static TransitionMatrix identity(std::size_t n) {
    TransitionMatrix t;
    t.rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.rows[i] = {{i}, {1.0}};
    t.k = 1;
    return t;
  }

  /// Builds a matrix from dense rows, renormalizing each non-zero row.
  static TransitionMatrix from_dense(const std::vector<std::vector<double>>& dense) {
    TransitionMatrix t;
    t.rows.resize(dense.size());
    for (std::size_t i = 0; i < dense.size(); ++i) {
      if (dense[i].size() != dense.size()) throw InvalidArgument("transition matrix must be square");
      double sum = 0;
      for (double v : dense[i]) {
        if (v < 0) throw InvalidArgument("transition matrix entries must be non-negative");
        sum += v;
      }
      for (std::size_t j = 0; j < dense.size(); ++j)
        if (dense[i][j] > 0) {
          t.rows[i].cols.push_back(j);
          t.rows[i].vals.push_back(dense[i][j] / sum);
        }
      t.k = std::max(t.k, t.rows[i].cols.size());
    }
    return t;
  }
};

/// Keeps, per row, the k largest cosine similarities to other items (negative
/// values clamped to zero and dropped), then renormalizes the row to sum 1.
/// Zero vectors and rows without positive similarities are left empty.
inline TransitionMatrix build_knn_graph(const std::vector<Vector>& vectors, std::size_t k) {
  if (k == 0) throw InvalidArgument("build_knn_graph: k must be >= 1");
  const std::size_t n = vectors.size();
  std::vector<Vector> unit(n);
  std::vector<bool> zero(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (i && vectors[i].size() != vectors[0].size()) throw InvalidArgument("build_knn_graph: dimension mismatch");
    zero[i] = norm2(vectors[i]) == 0;
    unit[i] = normalized(vectors[i]);
  }
  TransitionMatrix t;
  t.k = k;
  t.rows.resize(n);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    if (zero[i]) continue;
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || zero[j]) continue;
      double s = std::max(0.0, dot(unit[i], unit[j]));
      if (s > 0) cand.emplace_back(s, j);
    }
    std::size_t keep = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    cand.resize(keep);
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    double sum = 0;
    for (const auto& c : cand) sum += c.first;
    for (const auto& c : cand) {
      t.rows[i].cols.push_back(c.second);
      t.rows[i].vals.push_back(c.first / sum);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Label propagation

struct LpaConfig {
  int max_iters = 100;
  /// Stop once the largest absolute change in Y falls below this.
  double tol = 1e-6;
  /// Labels within this relative distance of a row's maximum count as tied;
  /// ties go to the lowest label. Rows of one converged component differ only
  /// by numerical noise, and this keeps them on the same label.
  double tie_tolerance = 1e-3;
};

/// Propagates Y <- T Y from the identity and assigns each node its most
/// probable label. Isolated nodes keep their own label. The argmax is taken
/// over the mean of the last two iterates, which cancels the period-2
/// oscillation of bipartite components and is a no-op once converged.
inline ClusterAssignment lpa_cluster(const TransitionMatrix& t, const LpaConfig& cfg = {}) {
  const std::size_t n = t.size();
  for (const auto& row : t.rows)
    for (auto c : row.cols)
      if (c >= n) throw InvalidArgument("lpa_cluster: transition matrix is not square");
  std::vector<double> y(n * n, 0.0), next(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) y[i * n + i] = 1.0;

  int iters = 0;
  for (; iters < cfg.max_iters;) {
    ++iters;
    double change = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double* out = &next[i * n];
      if (t.isolated(i)) {
        std::copy_n(&y[i * n], n, out);
        continue;
      }
      std::fill_n(out, n, 0.0);
      const auto& row = t.rows[i];
      for (std::size_t e = 0; e < row.cols.size(); ++e) {
        const double w = row.vals[e];
        const double* src = &y[row.cols[e] * n];
        for (std::size_t j = 0; j < n; ++j) out[j] += w * src[j];
      }
      for (std::size_t j = 0; j < n; ++j) change = std::max(change, std::abs(out[j] - y[i * n + j]));
    }
    y.swap(next);
    if (change < cfg.tol) break;
  }

  if (iters > 0)
    for (std::size_t i = 0; i < n * n; ++i) y[i] = 0.5 * (y[i] + next[i]);
  std::vector<std::size_t> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &y[i * n];
    double best = *std::max_element(row, row + n);
    double floor = best - std::abs(best) * cfg.tie_tolerance;
    raw[i] = static_cast<std::size_t>(std::find_if(row, row + n, [&](double v) { return v >= floor; }) - row);
  }
  return relabel_dense(raw, ClusterMethod::Lpa, iters);
}

// ---------------------------------------------------------------------------
// K-means

struct KMeansResult {
  ClusterAssignment assignment;
  std::vector<Vector> centroids;
  /// Within-cluster sum of squared distances after each assignment step.
  std::vector<double> objective_history;

  double objective() const { return objective_history.empty() ? 0 : objective_history.back(); }
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Lloyd iterations from k-means++ seeding. An emptied cluster is re-seeded
/// with the point farthest from its current centroid.
inline KMeansResult kmeans_cluster(const std::vector<Vector>& points, std::size_t k, std::uint64_t seed,
                                   int max_iters = 100) {
  const std::size_t n = points.size();
  if (k == 0) throw InvalidArgument("kmeans: K must be >= 1");
  if (k > n) throw InvalidArgument("kmeans: K=" + std::to_string(k) + " exceeds point count " + std::to_string(n));
  const std::size_t d = points[0].size();
  for (const auto& p : points)
    if (p.size() != d) throw InvalidArgument("kmeans: dimension mismatch");

  std::mt19937_64 rng(seed);
  std::vector<Vector> centroids;
  centroids.push_back(points[rng() % n]);
  std::vector<double> d2(n);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& ce : centroids) best = std::min(best, detail::sq_dist(points[i], ce));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0) {
      double r = detail::uniform01(rng) * total, acc = 0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng() % n;
    }
    centroids.push_back(points[pick]);
  }

  KMeansResult res;
  std::vector<std::size_t> label(n, 0), prev;
  int it = 0;
  for (; it < max_iters; ++it) {
    double obj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (std::size_t c = 0; c < k; ++c) {
        double dd = detail::sq_dist(points[i], centroids[c]);
        if (dd < best) {
          best = dd;
          label[i] = c;
        }
      }
      obj += best;
    }
    res.objective_history.push_back(obj);
    if (label == prev) break;
    prev = label;

    std::vector<Vector> sum(k, Vector(d, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[label[i]];
      for (std::size_t j = 0; j < d; ++j) sum[label[i]][j] += points[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) centroids[c][j] = sum[c][j] / static_cast<double>(count[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1;
      for (std::size_t i = 0; i < n; ++i) {
        double dd = detail::sq_dist(points[i], centroids[label[i]]);
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      centroids[c] = points[far];
    }
  }
  res.centroids = std::move(centroids);
  res.assignment = relabel_dense(label, ClusterMethod::KMeans, it + 1);
  return res;
}

/// Runs K-means from several seeds and keeps the lowest objective.
inline KMeansResult kmeans_best_of(const std::vector<Vector>& points, std::size_t k,
                                   std::span<const std::uint64_t> seeds, int max_iters = 100) {
  if (seeds.empty()) throw InvalidArgument("kmeans_best_of: no seeds");
  KMeansResult best = kmeans_cluster(points, k, seeds[0], max_iters);
  for (std::size_t s = 1; s < seeds.size(); ++s) {
    auto r = kmeans_cluster(points, k, seeds[s], max_iters);
    if (r.objective() < best.objective()) best = std::move(r);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Map equation

/// Undirected flow graph derived from a transition matrix: w_ij = T_ij + T_ji,
/// node visit rate p_i = strength_i / total.
struct FlowGraph {
  std::vector<std::vector<std::pair<std::size_t, double>>> adj;  // no self loops
  std::vector<double> node_flow;
  double total_weight = 0;  // sum of strengths (twice the undirected edge weight)

  std::size_t size() const { return adj.size(); }

  static FlowGraph from_transitions(const TransitionMatrix& t) {
    const std::size_t n = t.size();
    std::vector<std::map<std::size_t, double>> w(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t e = 0; e < t.rows[i].cols.size(); ++e) {
        std::size_t j = t.rows[i].cols[e];
        if (j >= n) throw InvalidArgument("mine_cluster: transition matrix is not square");
        if (j == i) continue;
        w[i][j] += t.rows[i].vals[e];
        w[j][i] += t.rows[i].vals[e];
      }
    FlowGraph g;
    g.adj.resize(n);
    g.node_flow.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (auto [j, v] : w[i]) {
        g.adj[i].emplace_back(j, v);
        g.node_flow[i] += v;
        g.total_weight += v;
      }
    if (g.total_weight > 0)
      for (auto& p : g.node_flow) p /= g.total_weight;
    return g;
  }
};

/// Two-level map equation (natural log):
///   L = q log q − 2 Σ q_m log q_m − Σ p_a log p_a + Σ (q_m + p_m) log(q_m + p_m)
/// with q_m the exit flow of module m and p_m its total visit rate.
inline double map_equation(const FlowGraph& g, const std::vector<std::size_t>& module) {
  if (module.size() != g.size()) throw InvalidArgument("map_equation: partition size mismatch");
  if (g.total_weight <= 0) return 0;
  std::unordered_map<std::size_t, std::pair<double, double>> mods;  // exit, flow
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto& m = mods[module[i]];
    m.second += g.node_flow[i];
    for (auto [j, w] : g.adj[i])
      if (module[j] != module[i]) m.first += w / g.total_weight;
  }
  double q = 0, sum_exit = 0, sum_both = 0, sum_nodes = 0;
  for (auto& [_, m] : mods) {
    q += m.first;
    sum_exit += detail::plogp(m.first);
    sum_both += detail::plogp(m.first + m.second);
  }
  for (double p : g.node_flow) sum_nodes += detail::plogp(p);
  return detail::plogp(q) - 2 * sum_exit - sum_nodes + sum_both;
}

struct MineResult {
  ClusterAssignment assignment;
  /// Codelength after seeding (all singletons) and after every greedy pass.
  std::vector<double> codelength_history;
};

/// Greedy map-equation minimization: local node moves that strictly lower the
/// codelength, then aggregation of modules into super-nodes, repeated until no
/// move helps. Node visiting order is shuffled with `seed`.
inline MineResult mine_cluster(const TransitionMatrix& t, std::uint64_t seed, int max_passes = 100) {
  const FlowGraph g = FlowGraph::from_transitions(t);
  const std::size_t n = g.size();
  std::vector<std::size_t> node_module(n);
  std::iota(node_module.begin(), node_module.end(), 0);

  MineResult res;
  res.codelength_history.push_back(map_equation(g, node_module));
  if (g.total_weight <= 0) {
    res.assignment = relabel_dense(node_module, ClusterMethod::MinE, 0);
    return res;
  }

  const double W = g.total_weight;
  double node_term = 0;
  for (double p : g.node_flow) node_term += detail::plogp(p);

  // Current level: super-nodes with flows, out-weights and adjacency.
  std::vector<std::vector<std::pair<std::size_t, double>>> adj = g.adj;
  std::vector<double> flow = g.node_flow;
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};

  std::mt19937_64 rng(seed);
  int passes = 0;
  bool improved_level = true;
  while (improved_level && passes < max_passes) {
    improved_level = false;
    const std::size_t m = adj.size();
    std::vector<double> out(m, 0.0);
    for (std::size_t a = 0; a < m; ++a)
      for (auto [b, w] : adj[a])
        if (b != a) out[a] += w;

    std::vector<std::size_t> mod(m);
    std::iota(mod.begin(), mod.end(), 0);
    std::vector<double> exit(m), mflow(m);
    for (std::size_t a = 0; a < m; ++a) {
      exit[a] = out[a] / W;
      mflow[a] = flow[a];
    }
    double sum_exit = 0, sum_plogp_exit = 0, sum_plogp_both = 0;
    for (std::size_t a = 0; a < m; ++a) {
      sum_exit += exit[a];
      sum_plogp_exit += detail::plogp(exit[a]);
      sum_plogp_both += detail::plogp(exit[a] + mflow[a]);
    }
    auto codelength = [&](double se, double spe, double spb) { return detail::plogp(se) - 2 * spe - node_term + spb; };

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    bool moved = true;
    while (moved && passes < max_passes) {
      moved = false;
      ++passes;
      for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng() % k]);
      for (auto a : order) {
        if (flow[a] <= 0) continue;
        std::map<std::size_t, double> to_mod;
        for (auto [b, w] : adj[a])
          if (b != a) to_mod[mod[b]] += w;
        const std::size_t from = mod[a];
        const double w_from = to_mod.count(from) ? to_mod[from] : 0.0;
        const double old_from_exit = exit[from];
        const double new_from_exit = old_from_exit - (out[a] - w_from) / W + w_from / W;
        const double new_from_flow = mflow[from] - flow[a];
        const double current = codelength(sum_exit, sum_plogp_exit, sum_plogp_both);

        double best_delta = -1e-12;
        std::size_t best_mod = from;
        double best_se = 0, best_spe = 0, best_spb = 0;
        for (auto [target, w_to] : to_mod) {
          if (target == from) continue;
          const double new_to_exit = exit[target] + (out[a] - w_to) / W - w_to / W;
          const double new_to_flow = mflow[target] + flow[a];
          double se = sum_exit - old_from_exit - exit[target] + new_from_exit + new_to_exit;
          double spe = sum_plogp_exit - detail::plogp(old_from_exit) - detail::plogp(exit[target]) +
                       detail::plogp(new_from_exit) + detail::plogp(new_to_exit);
          double spb = sum_plogp_both - detail::plogp(old_from_exit + mflow[from]) -
                       detail::plogp(exit[target] + mflow[target]) + detail::plogp(new_from_exit + new_from_flow) +
                       detail::plogp(new_to_exit + new_to_flow);
          double delta = codelength(se, spe, spb) - current;
          if (delta < best_delta) {
            best_delta = delta;
            best_mod = target;
            best_se = se;
            best_spe = spe;
            best_spb = spb;
          }
        }
        if (best_mod == from) continue;
        const double w_to = to_mod[best_mod];
        exit[best_mod] = exit[best_mod] + (out[a] - w_to) / W - w_to / W;
        mflow[best_mod] += flow[a];
        exit[from] = new_from_exit;
        mflow[from] = new_from_flow;
        sum_exit = best_se;
        sum_plogp_exit = best_spe;
        sum_plogp_both = best_spb;
        mod[a] = best_mod;
        moved = true;
        improved_level = true;
      }
      for (std::size_t a = 0; a < m; ++a)
        for (auto i : members[a]) node_module[i] = mod[a];
      res.codelength_history.push_back(map_equation(g, node_module));
    }
    if (!improved_level) break;

    // Aggregate modules into super-nodes.
    std::map<std::size_t, std::size_t> dense;
    for (std::size_t a = 0; a < m; ++a) dense.try_emplace(mod[a], dense.size());
    const std::size_t mm = dense.size();
    std::vector<std::map<std::size_t, double>> agg(mm);
    std::vector<double> agg_flow(mm, 0.0);
    std::vector<std::vector<std::size_t>> agg_members(mm);
    for (std::size_t a = 0; a < m; ++a) {
      std::size_t A = dense[mod[a]];
      agg_flow[A] += flow[a];
      agg_members[A].insert(agg_members[A].end(), members[a].begin(), members[a].end());
      for (auto [b, w] : adj[a]) agg[A][dense[mod[b]]] += w;
    }
    adj.assign(mm, {});
    for (std::size_t A = 0; A < mm; ++A)
      for (auto [B, w] : agg[A]) adj[A].emplace_back(B, w);
    flow = std::move(agg_flow);
    members = std::move(agg_members);
    if (mm == m) break;
  }

  res.assignment = relabel_dense(node_module, ClusterMethod::MinE, passes);
  return res;
}

}  // namespace schema_forge

#endif
