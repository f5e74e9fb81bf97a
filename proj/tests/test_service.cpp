#include <gtest/gtest.h>

#include <thread>

#include "carto/service.hpp"
#include "carto/storage.hpp"
#include "support.hpp"

using namespace carto;
using namespace carto::service;
using nlohmann::json;

namespace {

class Api : public ::testing::Test {
 protected:
  void SetUp() override {
    ServiceOptions opts;
    opts.config.workers = 2;
    opts.config.timer_minutes = 1;
    opts.seed = 11;
    opts.clock = testing_support::ticking_clock();
    mock_ = testing_support::mock_gateway();
    opts.gateway = mock_.gateway;
    service_ = std::make_unique<SessionService>(std::move(opts));
    server_ = std::make_unique<HttpServer>(*service_);
    port_ = server_->bind("127.0.0.1", 0);
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override {
    server_->stop();
    thread_.join();
    service_->wait_idle();
  }

  struct Reply {
    int status = 0;
    json body;
    std::string raw;
  };

  static Reply wrap(const httplib::Result& r) {
    if (!r) return {};
    Reply out{r->status, json::parse(r->body, nullptr, false), r->body};
    return out;
  }

  httplib::Headers auth() const { return {{"Authorization", "Bearer " + token_}}; }
  std::string path(const std::string& tail) const { return "/api/v1/sessions/" + id_ + tail; }

  Reply get(const std::string& tail) { return wrap(client_->Get(path(tail), auth())); }
  Reply post(const std::string& tail, const json& body) {
    return wrap(client_->Post(path(tail), auth(), body.dump(), "application/json"));
  }
  Reply patch(const std::string& tail, const json& body) {
    return wrap(client_->Patch(path(tail), auth(), body.dump(), "application/json"));
  }

  void open_session(const std::string& seed = "Weddings") {
    const auto r = wrap(client_->Post("/api/v1/sessions", json{{"seed_topic", seed}, {"country", "NGA"}}.dump(),
                                      "application/json"));
    ASSERT_EQ(r.status, 201) << r.raw;
    id_ = r.body.at("session_id");
    token_ = r.body.at("token");
    ASSERT_EQ(r.body.at("version"), 1u);
  }

  std::uint64_t version() { return get("/tree").body.at("version"); }

  json wait_job(std::uint64_t job) {
    for (int i = 0; i < 500; ++i) {
      const auto r = get("/jobs/" + std::to_string(job));
      const auto status = r.body.at("status").get<std::string>();
      if (status == "applied" || status == "failed") return r.body;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ADD_FAILURE() << "job " << job << " did not finish";
    return {};
  }

  testing_support::MockSetup mock_;
  std::unique_ptr<SessionService> service_;
  std::unique_ptr<HttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
  std::string id_, token_;
};

}  // namespace

TEST_F(Api, HealthAndSessionCreation) {
  const auto h = wrap(client_->Get("/api/v1/health"));
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(h.body, json({{"ok", true}}));

  open_session();
  const auto tree = get("/tree");
  ASSERT_EQ(tree.status, 200);
  EXPECT_EQ(tree.body["session_id"], id_);
  EXPECT_EQ(tree.body["meta"]["country"], "nga");
  ASSERT_EQ(tree.body["nodes"].size(), 1u);
  EXPECT_EQ(tree.body["nodes"][0]["kind"], "concept");
  EXPECT_EQ(tree.body["nodes"][0]["text"], "Weddings");
  EXPECT_EQ(tree.body["nodes"][0]["depth"], 0);

  const auto bad = wrap(client_->Post("/api/v1/sessions", R"({"country":"xyz"})", "application/json"));
  EXPECT_EQ(bad.status, 400);
  EXPECT_EQ(bad.body["error"]["code"], "InvalidArgument");
  const auto junk = wrap(client_->Post("/api/v1/sessions", "[1,2]", "application/json"));
  EXPECT_EQ(junk.status, 400);
}

TEST_F(Api, TokenIsRequired) {
  open_session();
  EXPECT_EQ(wrap(client_->Get(path("/tree"))).status, 401);
  EXPECT_EQ(wrap(client_->Get(path("/tree"), {{"Authorization", "Bearer nope"}})).status, 401);
  EXPECT_EQ(wrap(client_->Get(path("/tree"), {{"Authorization", token_}})).status, 401);
  const auto other = wrap(client_->Get("/api/v1/sessions/s9-unknown/tree", auth()));
  EXPECT_EQ(other.status, 404);
  EXPECT_EQ(other.body["error"]["code"], "UnknownSession");

  // tokens do not carry over between sessions
  const auto first = token_;
  open_session("Funerals");
  EXPECT_NE(first, token_);
  EXPECT_EQ(wrap(client_->Get(path("/tree"), {{"Authorization", "Bearer " + first}})).status, 401);
}

TEST_F(Api, OptimisticMutations) {
  open_session();
  auto r = post("/nodes", {{"parent", 1}, {"kind", "question"}, {"text", "List wedding customs."}, {"expected_version", 1}});
  ASSERT_EQ(r.status, 201) << r.raw;
  const auto q = r.body["node_id"].get<std::uint64_t>();
  EXPECT_EQ(r.body["version"], 2u);
  ASSERT_EQ(r.body["events"].size(), 1u);
  EXPECT_EQ(r.body["events"][0]["kind"], "create");
  EXPECT_EQ(r.body["events"][0]["actor"], "human");

  // stale version
  r = post("/nodes", {{"parent", 1}, {"kind", "question"}, {"text", "again"}, {"expected_version", 1}});
  EXPECT_EQ(r.status, 409);
  EXPECT_EQ(r.body["error"]["code"], "VersionConflict");
  r = post("/nodes", {{"parent", 1}, {"kind", "question"}, {"text", "again"}});
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(version(), 2u);

  r = post("/nodes", {{"parent", q}, {"kind", "question"}, {"text", "bad"}, {"expected_version", 2}});
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.body["error"]["code"], "KindViolation");

  r = post("/nodes", {{"parent", q}, {"kind", "answer"}, {"text", "dowry"}, {"expected_version", 2}});
  ASSERT_EQ(r.status, 201) << r.raw;
  const auto a = r.body["node_id"].get<std::uint64_t>();

  r = patch("/nodes/" + std::to_string(a), {{"text", "bride price"}, {"expected_version", 3}});
  ASSERT_EQ(r.status, 200) << r.raw;
  EXPECT_EQ(r.body["char_distance"], 9);
  EXPECT_EQ(r.body["version"], 4u);

  r = post("/nodes/" + std::to_string(a) + "/score", {{"score", 3}, {"expected_version", 4}});
  ASSERT_EQ(r.status, 200) << r.raw;
  r = post("/nodes/" + std::to_string(a) + "/score", {{"score", 5}, {"expected_version", 5}});
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.body["error"]["code"], "ScoreOutOfRange");
  r = post("/nodes/" + std::to_string(a) + "/validate", {{"expected_version", 5}});
  ASSERT_EQ(r.status, 200) << r.raw;
  EXPECT_EQ(r.body["events"][0]["kind"], "validate");

  // delete takes expected_version from the query string
  auto d = wrap(client_->Delete(path("/nodes/" + std::to_string(q) + "?expected_version=6"), auth()));
  ASSERT_EQ(d.status, 200) << d.raw;
  EXPECT_EQ(d.body["deleted"], json::array({q, a}));
  d = wrap(client_->Delete(path("/nodes/" + std::to_string(q) + "?expected_version=7"), auth()));
  EXPECT_EQ(d.status, 422);
  EXPECT_EQ(d.body["error"]["code"], "NodeDeleted");
  d = wrap(client_->Delete(path("/nodes/999?expected_version=7"), auth()));
  EXPECT_EQ(d.status, 404);

  const auto tree = get("/tree");
  EXPECT_EQ(tree.body["nodes"].size(), 1u);
  EXPECT_EQ(tree.body["nodes"][0]["children"], json::array());

  const auto reward = get("/reward");
  ASSERT_EQ(reward.status, 200);
  // create "List wedding customs." (21) + create "dowry" (5) + edit distance 9
  EXPECT_EQ(reward.body["total_chars"], 35);
  EXPECT_EQ(reward.body["bonus_cents"], 18);
  EXPECT_EQ(reward.body["bonus"], "0.18");
  EXPECT_EQ(reward.body["validated_count"], 0);
  EXPECT_LE(reward.body["timer_remaining_seconds"].get<std::int64_t>(), 60);
  EXPECT_FALSE(reward.body["timer_expired"].get<bool>());

  const auto all = get("/events");
  // the cascade logs one delete per node, both at version 7
  EXPECT_EQ(all.body["events"].size(), 8u);
  const auto tail = get("/events?since=5");
  ASSERT_EQ(tail.body["events"].size(), 3u);
  EXPECT_EQ(tail.body["events"][0]["version"], 6u);
  EXPECT_EQ(tail.body["events"][1]["version"], 7u);
  EXPECT_EQ(tail.body["events"][2]["version"], 7u);
}

TEST_F(Api, GenerationJobsApplyOnTheLatestTree) {
  open_session();
  auto r = post("/generate", {{"kind", "questions"}, {"target", 1}, {"n", 3}});
  ASSERT_EQ(r.status, 202) << r.raw;
  const auto job = wait_job(r.body["job_id"]);
  ASSERT_EQ(job["status"], "applied") << job.dump();
  ASSERT_EQ(job["created"].size(), 3u);
  const auto q = job["created"][0].get<std::uint64_t>();

  r = post("/generate", {{"kind", "answers"}, {"target", q}, {"n", 4}});
  ASSERT_EQ(r.status, 202);
  const auto answers = wait_job(r.body["job_id"]);
  ASSERT_EQ(answers["status"], "applied") << answers.dump();
  EXPECT_FALSE(answers["created"].empty());

  const auto tree = get("/tree");
  std::size_t with_conf = 0;
  for (const auto& n : tree.body["nodes"]) {
    if (n["kind"] == "answer") {
      EXPECT_EQ(n["parent"], q);
      EXPECT_EQ(n["author"], "model");
      if (!n["confidence"].is_null()) {
        ++with_conf;
        EXPECT_EQ(n["uncertain"].get<bool>(), n["confidence"].get<double>() <= 0.4);
      }
    }
    if (n["id"] == q) EXPECT_TRUE(n["difficulty"].is_string());
  }
  EXPECT_EQ(with_conf, answers["created"].size());

  // generated text does not earn reward
  EXPECT_EQ(get("/reward").body["total_chars"], 0);

  r = post("/generate", {{"kind", "answers"}, {"target", 9999}});
  EXPECT_EQ(r.status, 404);
  r = post("/generate", {{"kind", "poems"}, {"target", 1}});
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(get("/jobs/77").status, 404);

  // a job whose target was deleted meanwhile fails without touching the tree
  const auto v = version();
  auto d = wrap(client_->Delete(path("/nodes/" + std::to_string(q) + "?expected_version=" + std::to_string(v)), auth()));
  ASSERT_EQ(d.status, 200);
  r = post("/generate", {{"kind", "answers"}, {"target", q}});
  const auto failed = wait_job(r.body["job_id"]);
  EXPECT_EQ(failed["status"], "failed");
  EXPECT_TRUE(failed.contains("error"));
  EXPECT_EQ(version(), v + 1);
}

TEST_F(Api, ExportImportRoundTrip) {
  open_session();
  auto r = post("/nodes", {{"parent", 1}, {"kind", "question"}, {"text", "What is served?"}, {"expected_version", 1}});
  ASSERT_EQ(r.status, 201);
  r = post("/nodes", {{"parent", r.body["node_id"]}, {"kind", "answer"}, {"text", "jollof"}, {"expected_version", 2}});
  ASSERT_EQ(r.status, 201);

  const auto exported = client_->Get(path("/export"), auth());
  ASSERT_TRUE(exported);
  ASSERT_EQ(exported->status, 200);
  EXPECT_NE(exported->get_header_value("Content-Disposition").find(id_ + ".json"), std::string::npos);
  const auto original = storage::session_from_string(exported->body);

  const auto imported = wrap(client_->Post("/api/v1/sessions/import", exported->body, "application/json"));
  ASSERT_EQ(imported.status, 201) << imported.raw;
  EXPECT_NE(imported.body["session_id"], id_);
  EXPECT_EQ(imported.body["version"], original.version());
  id_ = imported.body["session_id"];
  token_ = imported.body["token"];
  const auto again = client_->Get(path("/export"), auth());
  ASSERT_TRUE(again);
  EXPECT_EQ(storage::session_from_string(again->body).nodes(), original.nodes());
  EXPECT_EQ(again->body, exported->body);

  auto broken = exported->body;
  broken.replace(broken.find("jollof"), 6, "JOLLOF");
  const auto rejected = wrap(client_->Post("/api/v1/sessions/import", broken, "application/json"));
  EXPECT_EQ(rejected.status, 400);
  EXPECT_EQ(rejected.body["error"]["code"], "CorruptFile");
}

TEST_F(Api, AuditListsGatewayCalls) {
  open_session();
  auto r = post("/generate", {{"kind", "questions"}, {"target", 1}, {"n", 2}});
  ASSERT_EQ(wait_job(r.body["job_id"])["status"], "applied");
  const auto audit = get("/audit");
  ASSERT_EQ(audit.status, 200);
  ASSERT_TRUE(audit.body.is_array());
  ASSERT_FALSE(audit.body.empty());
  for (const auto& e : audit.body) {
    EXPECT_TRUE(e.contains("key"));
    EXPECT_TRUE(e.contains("attempt"));
    EXPECT_TRUE(e["ok"].get<bool>());
  }
  EXPECT_EQ(audit.body.size(), mock_.gateway->audit().entries().size());
}

TEST_F(Api, ConcurrentWritersSeeConflictsNotCorruption) {
  open_session();
  std::atomic<int> ok{0}, conflict{0};
  std::vector<std::thread> writers;
  for (int w = 0; w < 4; ++w) {
    writers.emplace_back([&, w] {
      httplib::Client c("127.0.0.1", port_);
      for (int i = 0; i < 10; ++i) {
        const auto cur = wrap(c.Get(path("/tree"), auth())).body["version"];
        const auto res = wrap(c.Post(path("/nodes"), auth(),
                                     json{{"parent", 1}, {"kind", "question"},
                                          {"text", "q" + std::to_string(w) + "-" + std::to_string(i)},
                                          {"expected_version", cur}}
                                         .dump(),
                                     "application/json"));
        if (res.status == 201) ++ok;
        else if (res.status == 409) ++conflict;
      }
    });
  }
  for (auto& t : writers) t.join();
  EXPECT_EQ(ok + conflict, 40);
  EXPECT_GT(ok.load(), 0);
  const auto tree = get("/tree");
  EXPECT_EQ(tree.body["version"], std::uint64_t(1 + ok));
  EXPECT_EQ(tree.body["nodes"].size(), std::size_t(1 + ok));
}
