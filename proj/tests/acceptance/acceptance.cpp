// Acceptance run: one PASS/FAIL line per primary criterion with its measured
// value, pinned tolerance and runtime limit. Exit status 1 when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "schema_forge/evaluation.hpp"
#include "schema_forge/pipeline.hpp"
#include "schema_forge/refinement.hpp"
#include "schema_forge/synth.hpp"
#include "support/gradient_check.hpp"
#include "support/random_ops.hpp"

namespace sf = schema_forge;
using R = sf::IntentRole;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double limit_s;  // 0: no runtime limit
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome apriori_oracle() {
  std::mt19937_64 rng(20240601);
  std::size_t mismatches = 0;
  double max_diff = 0;
  for (int c = 0; c < 200; ++c) {
    std::size_t n = 1 + rng() % 500;
    std::vector<sf::RoleSet> sets;
    // Skewed masks so that some itemsets sit near any threshold.
    for (std::size_t i = 0; i < n; ++i) sets.emplace_back(static_cast<std::uint8_t>(1 + (rng() % 15) * (rng() % 2) % 15));
    const double sup = static_cast<double>(rng() % 41) / 100.0;
    const double conf = static_cast<double>(rng() % 101) / 100.0;
    auto a = sf::apriori(sets, sup, conf);
    auto b = sf::brute_force_patterns(sets, sup, conf);
    if (a.patterns.size() != b.patterns.size()) {
      ++mismatches;
      continue;
    }
    for (std::size_t i = 0; i < a.patterns.size(); ++i) {
      if (!(a.patterns[i].roles == b.patterns[i].roles)) {
        ++mismatches;
        break;
      }
      max_diff = std::max({max_diff, std::abs(a.patterns[i].support - b.patterns[i].support),
                           std::abs(a.patterns[i].confidence - b.patterns[i].confidence)});
    }
  }
  return {mismatches == 0 && max_diff <= 1e-12,
          "200 corpora, " + std::to_string(mismatches) + " set mismatches, max |diff| " + fmt("%.3g", max_diff) +
              " (tol 1e-12)"};
}

Outcome candidate_universe() {
  std::mt19937_64 rng(7);
  std::vector<sf::RoleSet> sets;
  for (int i = 0; i < 50; ++i) sets.emplace_back(static_cast<std::uint8_t>(1 + rng() % 15));
  auto n_random = sf::apriori(sets, 0.0, 0.0).patterns.size();
  auto n_single = sf::apriori(std::vector<sf::RoleSet>{sf::RoleSet{R::Action}}, 0.0, 0.0).patterns.size();
  return {n_random == 15 && n_single == 15,
          std::to_string(n_random) + " itemsets (random corpus), " + std::to_string(n_single) +
              " (one-set corpus), expected exactly 15"};
}

Outcome pattern_coverage() {
  auto spec = sf::SchemaSpec::finance_default();
  spec.seed = 101;
  spec.no_mention_rate = 0.2;
  auto corpus = sf::generate(spec, 10000);
  auto mined = sf::apriori(sf::extract_role_sets(corpus.annotated()).role_sets, 0.05, 0.1);
  std::vector<sf::RoleSet> all;
  for (const auto& it : corpus.items) all.push_back(sf::role_set_of(it.annotated));
  double cov = sf::pattern_coverage(mined, all);
  return {cov >= 0.70, "coverage " + fmt("%.4f", cov) + " over 10000 utterances (20% without mentions), threshold 0.70"};
}

Outcome gradient_check() {
  std::mt19937_64 rng(4242);
  double worst = 0;
  std::size_t params = 0;
  for (int i = 0; i < 50; ++i) {
    auto [enc, ex] = sf_test::random_cnn_case(rng);
    auto r = sf_test::check_gradient(enc, ex);
    worst = std::max(worst, r.max_relative_error);
    params += r.parameters;
  }
  return {worst <= 1e-4, "50 configurations, " + std::to_string(params) + " parameters, max relative error " +
                             fmt("%.3g", worst) + " (tol 1e-4)"};
}

Outcome clustering_recovery() {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<sf::Vector> pts;
  std::vector<int> labels;
  for (int b = 0; b < 4; ++b)
    for (int i = 0; i < 100; ++i) {
      sf::Vector p(16);
      for (auto& x : p) x = g(rng);
      p[static_cast<std::size_t>(b)] += 6.0;
      pts.push_back(std::move(p));
      labels.push_back(b);
    }
  auto lpa = sf::lpa_cluster(sf::build_knn_graph(pts, 5));
  auto km = sf::kmeans_best_of(pts, 4, std::vector<std::uint64_t>{1, 2, 3, 4, 5}).assignment;
  double v_lpa = sf::clustering_scores(labels, lpa).v_measure;
  double v_km = sf::clustering_scores(labels, km).v_measure;
  return {v_lpa >= 0.9 && v_km >= 0.9, "LPA v " + fmt("%.4f", v_lpa) + " (" + std::to_string(lpa.num_clusters) +
                                           " clusters), K-means v " + fmt("%.4f", v_km) + ", threshold 0.9"};
}

Outcome lpa_fixtures() {
  auto id = sf::lpa_cluster(sf::TransitionMatrix::identity(6));
  bool singletons = id.num_clusters == 6;
  std::vector<std::vector<double>> dense(6, std::vector<double>(6, 0.0));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      if (i != j && i / 3 == j / 3) dense[i][j] = 0.5;
  auto cl = sf::lpa_cluster(sf::TransitionMatrix::from_dense(dense));
  bool cliques = cl.num_clusters == 2 && cl.labels[0] == cl.labels[1] && cl.labels[1] == cl.labels[2] &&
                 cl.labels[3] == cl.labels[4] && cl.labels[4] == cl.labels[5] && cl.labels[0] != cl.labels[3];
  return {singletons && cliques, "identity(6) -> " + std::to_string(id.num_clusters) + " clusters; two 3-cliques -> " +
                                     std::to_string(cl.num_clusters) + " clusters" +
                                     (cliques ? " matching the cliques" : " NOT matching the cliques")};
}

Outcome irl_learnability() {
  auto spec = sf::SchemaSpec::finance_default();
  spec.seed = 202;
  spec.no_mention_rate = 0.1;
  spec.noise_rate = 0.1;
  auto data = sf::generate(spec, 2500).annotated();
  std::vector<sf::AnnotatedUtterance> train(data.begin(), data.begin() + 2000);
  auto model = sf::train_tagger(train).model;
  std::vector<sf::TagSequence> gold, pred;
  for (std::size_t i = 2000; i < data.size(); ++i) {
    gold.push_back(data[i].tags);
    pred.push_back(model.predict(data[i].utterance.tokens));
  }
  double f1 = sf::token_prf(gold, pred).weighted.f1;
  return {f1 >= 0.90, "held-out token F1 " + fmt("%.4f", f1) + " on 500 utterances after 2000 training, threshold 0.90"};
}

struct E2eScores {
  double intent = 0;
  double slot = 0;
  std::size_t concepts = 0;
};

E2eScores end_to_end(sf::ClusterMethod method) {
  auto spec = sf::SchemaSpec::finance_default();
  spec.seed = 1;
  spec.no_mention_rate = 0.05;
  auto corpus = sf::generate(spec, 4500);
  std::vector<sf::AnnotatedUtterance> labeled;
  std::vector<sf::Utterance> unlabeled;
  for (std::size_t i = 0; i < 2000; ++i) labeled.push_back(corpus.items[i].annotated);
  for (std::size_t i = 2000; i < 4000; ++i) unlabeled.push_back(corpus.items[i].annotated.utterance);
  sf::InductionConfig cfg;
  cfg.cnn.seed = spec.seed;
  cfg.cluster.method = method;
  auto schema = sf::induce_schema(labeled, unlabeled, cfg);
  // Gold concepts are used only here, to name the induced concepts.
  auto mapping = sf::map_concepts_by_overlap(schema.repo, sf::gold_concept_index(spec));
  auto model = schema.inference_model();
  std::vector<std::string> gi, pi;
  std::set<sf::SlotTuple> gs, ps;
  for (std::size_t i = 4000; i < corpus.items.size(); ++i) {
    const auto& it = corpus.items[i];
    const auto& id = it.annotated.utterance.id;
    auto r = sf::translate_result(sf::infer(it.annotated.utterance, model), schema.repo, mapping);
    gi.push_back(it.intent);
    pi.push_back(r.intent);
    for (const auto& [c, v] : it.slots)
      for (const auto& m : v) gs.insert({id, c, sf::normalize_mention(m)});
    for (const auto& [c, v] : r.slots)
      for (const auto& m : v) ps.insert({id, c, sf::normalize_mention(m)});
  }
  return {sf::intent_macro_f1(gi, pi).macro.f1, sf::slot_prf(gs, ps).f1, schema.repo.size()};
}

Outcome e2e_mine() {
  auto s = end_to_end(sf::ClusterMethod::MinE);
  return {s.intent >= 0.85 && s.slot >= 0.85, "map-equation concepts (" + std::to_string(s.concepts) +
                                                  "): intent macro-F1 " + fmt("%.4f", s.intent) + ", slot F1 " +
                                                  fmt("%.4f", s.slot) + " on 500 held-out, thresholds 0.85"};
}

// Long-tail fixture: each Argument concept keeps 8 of its 48 modifier x head
// mentions (every modifier and every head still occurs); the other 40 per
// concept are never seen in training or in the repository.
struct LongTail {
  sf::SchemaSpec spec;
  sf::ConceptRepository repo;
  std::vector<std::pair<std::string, std::string>> held_out;  // mention, gold concept
  std::shared_ptr<sf::SubwordCnnEncoder> encoder;
  sf::EmbeddingTable table;
};

const LongTail& long_tail() {
  static const LongTail lt = [] {
    LongTail out;
    out.spec = sf::SchemaSpec::finance_default();
    out.spec.seed = 303;
    for (auto& c : out.spec.role_concepts(R::Argument)) {
      std::vector<std::string> kept;
      for (std::size_t i = 0; i < c.mentions.size(); ++i) {
        bool keep = i >= 48 || (i / 6 < 8 && i % 6 == (i / 6) % 6);
        if (keep) kept.push_back(c.mentions[i]);
        else out.held_out.emplace_back(c.mentions[i], c.name);
      }
      c.mentions = kept;
    }
    out.repo = sf::gold_repository(out.spec);
    auto streams = sf::mentionize_corpus(sf::generate(out.spec, 4000).annotated());
    sf::CnnConfig cfg;
    cfg.seed = 303;
    out.encoder = std::make_shared<sf::SubwordCnnEncoder>(sf::train_cnn_encoder(streams, cfg).encoder);
    out.table = sf::encode_table(*out.encoder, streams);
    for (const auto& [m, _] : out.held_out) out.table.set(m, *out.encoder->embed(m));
    return out;
  }();
  return lt;
}

Outcome con_infer_long_tail() {
  const auto& lt = long_tail();
  sf::ConInferConfig cfg{0.2, 5};
  sf::MentionIndex index(lt.repo, *lt.encoder);
  std::size_t correct = 0, unassigned = 0;
  for (const auto& [m, gold] : lt.held_out) {
    auto id = sf::con_infer_one({m, R::Argument}, lt.repo, index, lt.encoder.get(), cfg);
    if (!id) ++unassigned;
    else correct += lt.repo.at(*id).name == gold;
  }
  double acc = static_cast<double>(correct) / static_cast<double>(lt.held_out.size());
  return {lt.held_out.size() == 200 && acc >= 0.85,
          std::to_string(lt.held_out.size()) + " unseen mentions, accuracy " + fmt("%.4f", acc) + " (" +
              std::to_string(unassigned) + " left uncategorized), delta 0.2, K 5, threshold 0.85"};
}

Outcome scale_invariance() {
  const auto& lt = long_tail();
  sf::EmbeddingTable scaled(lt.table.method(), lt.table.dim());
  for (const auto& [k, v] : lt.table.rows()) {
    sf::Vector s = v;
    for (auto& x : s) x *= 7.3;
    scaled.set(k, s);
  }
  sf::ConInferConfig cfg{0.2, 5};
  sf::MentionIndex ia(lt.repo, lt.table), ib(lt.repo, scaled);
  std::size_t decisions = 0, changed = 0;
  auto probe = [&](const std::string& m, R role) {
    ++decisions;
    changed += sf::con_infer_one({m, role}, lt.repo, ia, &lt.table, cfg) !=
               sf::con_infer_one({m, role}, lt.repo, ib, &scaled, cfg);
  };
  for (const auto& [m, _] : lt.held_out) probe(m, R::Argument);
  // Known mentions under a different role exercise the neighbor path too.
  for (const auto& [_, c] : lt.repo.concepts())
    for (const auto& m : c.mentions) probe(m, c.role == R::Argument ? R::Action : R::Argument);

  std::size_t points = 0, moved = 0;
  for (auto role : sf::kAllRoles) {
    std::vector<sf::Vector> a, b;
    for (const auto* c : lt.repo.by_role(role))
      for (const auto& m : c->mentions) {
        auto va = lt.table.embed(m), vb = scaled.embed(m);
        if (!va || !vb) continue;
        a.push_back(*va);
        b.push_back(*vb);
      }
    if (a.size() < 2) continue;
    auto la = sf::lpa_cluster(sf::build_knn_graph(a, 5)), lb = sf::lpa_cluster(sf::build_knn_graph(b, 5));
    points += a.size();
    for (std::size_t i = 0; i < a.size(); ++i) moved += la.labels[i] != lb.labels[i];
  }
  return {changed == 0 && moved == 0 && points > 0,
          "x7.3: " + std::to_string(changed) + " of " + std::to_string(decisions) + " con_infer decisions changed, " +
              std::to_string(moved) + " of " + std::to_string(points) + " LPA assignments changed (exact)"};
}

Outcome replay_log() {
  std::mt19937_64 rng(1000);
  auto base = sf_test::random_repo(rng, 24, 6);
  auto cur = base;
  std::vector<sf::RefinementOp> ops;
  auto path = (std::filesystem::temp_directory_path() / "sf_acceptance_replay.jsonl").string();
  std::filesystem::remove(path);
  std::string persisted;
  {
    sf::RefinementLog log(base, path);
    for (int i = 0; i < 1000; ++i) {
      auto op = sf_test::random_valid_op(cur, rng);
      cur = sf::apply_refinement(cur, op);
      ops.push_back(log.submit(op));
    }
    persisted = log.current().repo->canonical();
  }
  bool in_memory = sf::replay(base, ops).canonical() == cur.canonical();
  sf::RefinementLog reopened(base, path);
  bool from_file = reopened.current().repo->canonical() == cur.canonical() && persisted == cur.canonical();
  return {in_memory && from_file, "1000 random ops; replay from base " + std::string(in_memory ? "identical" : "DIFFERS") +
                                      ", reopened log " + (from_file ? "identical" : "DIFFERS") + " (byte compare)"};
}

Outcome metric_identities() {
  std::mt19937_64 rng(12);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    std::size_t n = 1 + rng() % 80;
    std::vector<int> g(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<int>(rng() % 6);
      p[i] = static_cast<int>(rng() % 7);
    }
    auto r = sf::clustering_scores(g, p);
    double h = r.homogeneity, c = r.completeness;
    double hm = h + c > 0 ? 2 * h * c / (h + c) : 0.0;
    worst = std::max(worst, std::abs(r.v_measure - hm));
  }
  std::vector<int> gold = {0, 0, 1, 1, 2, 2};
  auto same = sf::clustering_scores(gold, std::vector<int>{4, 4, 8, 8, 1, 1});
  auto one = sf::clustering_scores(gold, std::vector<int>(6, 3));
  auto each = sf::clustering_scores(gold, std::vector<int>{0, 1, 2, 3, 4, 5});
  bool f1 = same.homogeneity == 1.0 && same.completeness == 1.0 && same.v_measure == 1.0;
  bool f2 = one.homogeneity == 0.0 && one.completeness == 1.0;
  bool f3 = each.homogeneity == 1.0 && each.completeness < 1.0;
  return {worst <= 1e-12 && f1 && f2 && f3,
          "harmonic identity max |diff| " + fmt("%.3g", worst) + " (tol 1e-12); fixtures identical " +
              (f1 ? "ok" : "FAIL") + ", one-cluster " + (f2 ? "ok" : "FAIL") + ", singletons " + (f3 ? "ok" : "FAIL")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"apriori-oracle-equivalence", 5, apriori_oracle},
      {"candidate-universe", 0, candidate_universe},
      {"pattern-coverage", 30, pattern_coverage},
      {"encoder-gradient-check", 60, gradient_check},
      {"clustering-recovery", 10, clustering_recovery},
      {"lpa-fixtures", 0, lpa_fixtures},
      {"irl-learnability", 120, irl_learnability},
      {"end-to-end-induction", 300, e2e_mine},
      {"con-infer-long-tail", 30, con_infer_long_tail},
      {"scale-invariance", 0, scale_invariance},
      {"refinement-log-replay", 0, replay_log},
      {"metric-identities", 0, metric_identities},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool in_time = c.limit_s == 0 || secs < c.limit_s;
    bool pass = o.pass && in_time;
    failed += !pass;
    std::string timing = fmt("%.2f s", secs) + (c.limit_s > 0 ? " (limit " + fmt("%.0f s", c.limit_s) + ")" : "");
    std::printf("%s %-28s %s; %s\n", pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }

  // Not a criterion: the same induction with label propagation, for comparison.
  auto t0 = std::chrono::steady_clock::now();
  auto lpa = end_to_end(sf::ClusterMethod::Lpa);
  std::printf("INFO %-28s label-propagation concepts (%zu): intent macro-F1 %.4f, slot F1 %.4f; %.2f s\n",
              "end-to-end-induction-lpa", lpa.concepts, lpa.intent, lpa.slot,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
