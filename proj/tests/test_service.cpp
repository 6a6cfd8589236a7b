#include <gtest/gtest.h>

#include <filesystem>
#include <future>
#include <thread>

#include "schema_forge/service.hpp"
#include "support/fixture.hpp"

namespace sf = schema_forge;
using nlohmann::json;

namespace {

sf::ModelBundle fixture_bundle() {
  sf::ModelBundle b;
  b.tagger = sf_test::fixture_tagger();
  b.repo = sf_test::fixture_repo();
  b.patterns = sf_test::fixture_patterns();
  b.embed = std::make_shared<sf::EmbeddingTable>(sf_test::fixture_table());
  return b;
}

class ServiceTest : public ::testing::Test {
 protected:
  sf::RefinementLog log{sf_test::fixture_repo()};
  sf::SchemaService svc{fixture_bundle(), log};

  sf::ServiceResponse get(const std::string& path, std::multimap<std::string, std::string> q = {}) {
    return svc.handle("GET", path, q, "");
  }
  sf::ServiceResponse post(const std::string& path, const json& body) { return svc.handle("POST", path, {}, body.dump()); }
};

}  // namespace

TEST_F(ServiceTest, InferCheckDocument) {
  auto r = post("/infer", {{"text", "Check my insurance policy"}});
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(r.body["intent"], "Check-(Document)");
  EXPECT_EQ(r.body["status"], "OK");
  EXPECT_EQ(r.body["slots"]["Document"], json::array({"insurance policy"}));
}

TEST_F(ServiceTest, ErrorsCarryCodeAndMessage) {
  for (const auto& r : {post("/infer", {{"text", "   "}}), post("/infer", {{"txt", "x"}}), svc.handle("POST", "/infer", {}, "{oops"),
                        get("/concepts", {{"role", "Bogus"}}), get("/nope")}) {
    EXPECT_GE(r.status, 400);
    EXPECT_TRUE(r.body.contains("code"));
    EXPECT_TRUE(r.body.contains("message"));
  }
  EXPECT_EQ(get("/nope").status, 404);
  EXPECT_EQ(get("/concepts/99").status, 404);
}

TEST_F(ServiceTest, ConceptListingByRole) {
  auto r = get("/concepts", {{"role", "Argument"}});
  ASSERT_EQ(r.status, 200);
  ASSERT_EQ(r.body["concepts"].size(), 2u);
  EXPECT_EQ(r.body["concepts"][0]["name"], "Document");
  EXPECT_EQ(r.body["concepts"][0]["mention_count"], 3);
  EXPECT_EQ(get("/concepts").body["concepts"].size(), 5u);
  EXPECT_EQ(get("/concepts/3").body["name"], "Loan");
}

TEST_F(ServiceTest, RefineIsVisibleToInferenceAndLog) {
  auto r = post("/refine", {{"op", "rename"}, {"concept_id", 2}, {"name", "Paperwork"}, {"actor", "alice"}});
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(r.body["op"]["seq"], 1);
  EXPECT_EQ(post("/infer", {{"text", "Check my insurance policy"}}).body["intent"], "Check-(Paperwork)");
  auto l = get("/refine/log", {{"since", "0"}});
  ASSERT_EQ(l.body["ops"].size(), 1u);
  EXPECT_EQ(l.body["ops"][0]["actor"], "alice");
  EXPECT_EQ(get("/refine/log", {{"since", "1"}}).body["ops"].size(), 0u);
  EXPECT_EQ(get("/refine/log", {{"since", "-2"}}).status, 400);
  // Dangling id: rejected, log unchanged.
  EXPECT_EQ(post("/refine", {{"op", "merge"}, {"src_ids", {42}}, {"dst_id", 2}}).status, 400);
  EXPECT_EQ(get("/health").body["position"], 1);
}

TEST_F(ServiceTest, StaleMergeIsConflict) {
  auto a = post("/refine", {{"op", "merge"}, {"src_ids", {3}}, {"dst_id", 2}, {"base_seq", 0}});
  ASSERT_EQ(a.status, 200) << a.body;
  auto b = post("/refine", {{"op", "rename"}, {"concept_id", 2}, {"name", "X"}, {"base_seq", 0}});
  EXPECT_EQ(b.status, 409);
  EXPECT_EQ(b.body["code"], "conflict");
}

TEST_F(ServiceTest, ConcurrentMergesOneWins) {
  sf::ConceptRepository repo = sf_test::fixture_repo();
  repo.add_concept(sf::IntentRole::Argument, "Card", {"credit card"});
  sf::RefinementLog log2(repo);
  sf::SchemaService svc2(fixture_bundle(), log2);
  auto submit = [&](int src) {
    json op = {{"op", "merge"}, {"src_ids", {src}}, {"dst_id", 2}, {"base_seq", 0}};
    return svc2.handle("POST", "/refine", {}, op.dump()).status;
  };
  auto f1 = std::async(std::launch::async, submit, 3);
  auto f2 = std::async(std::launch::async, submit, 5);
  std::multiset<int> codes = {f1.get(), f2.get()};
  EXPECT_EQ(codes, (std::multiset<int>{200, 409}));
}

TEST_F(ServiceTest, Neighbors) {
  auto r = get("/neighbors", {{"mention", "medical report"}, {"role", "Argument"}, {"k", "3"}});
  ASSERT_EQ(r.status, 200) << r.body;
  ASSERT_EQ(r.body["neighbors"].size(), 3u);
  EXPECT_EQ(r.body["neighbors"][0]["mention"], "medical certificate");
  EXPECT_EQ(r.body["neighbors"][0]["concept"], "Document");
  EXPECT_EQ(get("/neighbors", {{"mention", "medical report"}, {"role", "Argument"}, {"k", "99"}}).body["neighbors"].size(), 5u);
  EXPECT_EQ(get("/neighbors", {{"mention", ""}, {"role", "Argument"}}).status, 400);
  EXPECT_EQ(get("/neighbors", {{"mention", "x"}, {"role", "Verb"}}).status, 400);
}

TEST_F(ServiceTest, PatternsAndHealth) {
  EXPECT_EQ(get("/patterns").body, sf_test::fixture_patterns().to_json());
  auto h = get("/health").body;
  EXPECT_EQ(h["status"], "ok");
  EXPECT_EQ(h["concepts"], 5);
}

TEST(Serve, MissingArtifactNamesPath) {
  auto dir = sf_test::write_fixture_model_dir("sf_serve_missing");
  std::filesystem::remove(dir / sf::artifacts::kPatterns);
  sf::ServeConfig cfg;
  cfg.model_dir = dir.string();
  httplib::Server server;
  try {
    sf::serve(cfg, server);
    FAIL();
  } catch (const sf::MissingFile& e) {
    EXPECT_EQ(e.path(), (dir / sf::artifacts::kPatterns).string());
  }
  std::filesystem::remove_all(dir);
}

TEST(Serve, LiveRoundTripAndLogReplayOnRestart) {
  auto dir = sf_test::write_fixture_model_dir("sf_serve_live");
  sf::ServeConfig cfg;
  cfg.model_dir = dir.string();
  cfg.port = 0;
  cfg.snapshot_every = 1;
  for (int round = 0; round < 2; ++round) {
    httplib::Server server;
    std::promise<int> bound;
    std::thread t([&] { sf::serve(cfg, server, [&](int p) { bound.set_value(p); }); });
    int port = bound.get_future().get();
    server.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);
    if (round == 0) {
      auto r = cli.Post("/refine", json{{"op", "rename"}, {"concept_id", 2}, {"name", "Paperwork"}}.dump(), "application/json");
      ASSERT_TRUE(r);
      EXPECT_EQ(r->status, 200) << r->body;
    }
    auto r = cli.Post("/infer", json{{"text", "Check my insurance policy"}}.dump(), "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(json::parse(r->body)["intent"], "Check-(Paperwork)");
    auto c = cli.Get("/concepts?role=Argument");
    ASSERT_TRUE(c);
    EXPECT_EQ(json::parse(c->body)["concepts"].size(), 2u);
    server.stop();
    t.join();
  }
  std::filesystem::remove_all(dir);
}
