#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "carto/config.hpp"
#include "carto/elicitation.hpp"
#include "carto/error.hpp"
#include "carto/knowledge_tree.hpp"
#include "carto/llm/gateway.hpp"
#include "carto/llm/prompt.hpp"
#include "carto/storage.hpp"

namespace carto::service {

using ojson = nlohmann::ordered_json;

/// Fixed-size pool running queued tasks in submission order.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t workers) {
    for (std::size_t i = 0; i < std::max<std::size_t>(1, workers); ++i) {
      threads_.emplace_back([this] { run(); });
    }
  }

  ~WorkerPool() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void submit(std::function<void()> task) {
    {
      std::lock_guard lock(mutex_);
      tasks_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stopping_ || !tasks_.empty(); });
        if (tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop_front();
      }
      task();
    }
  }

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

struct ServiceOptions {
  Config config;
  std::uint64_t seed = 0;
  KnowledgeTree::Clock clock = system_now;
  std::shared_ptr<llm::Gateway> gateway;  // overrides the configured provider
};

/// Session store and mutation API behind the HTTP layer. Every method takes
/// and returns JSON and throws Error on failure.
class SessionService {
 public:
  explicit SessionService(ServiceOptions options)
      : options_(std::move(options)),
        gateway_(options_.gateway ? options_.gateway
                                  : make_gateway(options_.config, options_.config.default_provider, options_.seed)),
        rng_(options_.seed ^ 0x5eed5eedULL),
        pool_(options_.config.workers) {
    elicitation_.max_depth = options_.config.max_depth;
  }

  ~SessionService() { wait_idle(); }

  [[nodiscard]] llm::Gateway& gateway() { return *gateway_; }
  [[nodiscard]] const llm::TemplateRegistry& templates() const { return templates_; }

  ojson create_session(const nlohmann::json& body) {
    const auto seed = body.value("seed_topic", "");
    const auto country = text::to_lower_ascii(body.value("country", "nga"));
    if (!templates_.has(country)) fail(ErrorCode::InvalidArgument, "no templates for country '" + country + "'");
    SessionMeta meta{country, body.value("language", templates_.for_country(country).questions.language),
                     body.value("annotator", "anonymous"), seed};
    RewardConfig reward;
    reward.reward_rate = options_.config.reward_rate;
    auto s = std::make_shared<Session>(KnowledgeTree(meta, reward, options_.clock));
    register_session(s);
    return session_handle(*s, true);
  }

  ojson import_session(const std::string& file) {
    auto tree = storage::session_from_string(file);
    tree.set_clock(options_.clock);
    auto s = std::make_shared<Session>(std::move(tree));
    register_session(s);
    return session_handle(*s, true);
  }

  void authorize(const std::string& id, const std::string& token) {
    const auto s = session(id);
    if (token.empty() || token != s->token) fail(ErrorCode::Unauthorized, "missing or wrong session token");
  }

  ojson tree(const std::string& id) {
    const auto s = session(id);
    const auto snap = s->snapshot();
    ojson j = ojson::object();
    j["session_id"] = id;
    j["version"] = snap->version();
    j["root"] = snap->root().value;
    j["meta"] = storage::to_json(snap->meta());
    ojson nodes = storage::nodes_json(*snap, false);
    for (auto& n : nodes) annotate(*snap, n);
    j["nodes"] = std::move(nodes);
    return j;
  }

  ojson add_node(const std::string& id, const nlohmann::json& body) {
    return mutate(id, body, [&](KnowledgeTree& t, ojson& out) {
      const NodeId nid = t.add_node(NodeId{body.at("parent").get<std::uint64_t>()},
                                    parse_node_kind(body.at("kind").get<std::string>()),
                                    body.at("text").get<std::string>(), Author::Human);
      out["node_id"] = nid.value;
    });
  }

  ojson edit_node(const std::string& id, std::uint64_t node, const nlohmann::json& body) {
    return mutate(id, body, [&](KnowledgeTree& t, ojson& out) {
      const auto e = t.edit_node(NodeId{node}, body.at("text").get<std::string>(), Author::Human);
      out["char_distance"] = e.char_distance;
    });
  }

  ojson delete_node(const std::string& id, std::uint64_t node, const nlohmann::json& body) {
    return mutate(id, body, [&](KnowledgeTree& t, ojson& out) {
      std::vector<std::uint64_t> ids;
      for (NodeId d : t.delete_node(NodeId{node})) ids.push_back(d.value);
      out["deleted"] = ids;
    });
  }

  ojson validate_node(const std::string& id, std::uint64_t node, const nlohmann::json& body) {
    return mutate(id, body, [&](KnowledgeTree& t, ojson&) { t.validate_node(NodeId{node}); });
  }

  ojson score_node(const std::string& id, std::uint64_t node, const nlohmann::json& body) {
    return mutate(id, body, [&](KnowledgeTree& t, ojson&) {
      t.score_node(NodeId{node}, body.at("score").get<int>(), body.value("annotator", t.meta().annotator));
    });
  }

  /// Queues a generation job. The target's text is read when the job runs.
  ojson request_generation(const std::string& id, const nlohmann::json& body) {
    const auto s = session(id);
    auto job = std::make_shared<GenerationJob>();
    job->kind = parse_generation_kind(body.at("kind").get<std::string>());
    job->target = NodeId{body.at("target").get<std::uint64_t>()};
    job->n = body.value("n", std::size_t{5});
    {
      std::lock_guard lock(s->mutex);
      const auto* node = s->tree.find(job->target);
      if (!node) fail(ErrorCode::UnknownNode, "no node " + to_string(job->target));
      job->id = ++s->next_job;
      job->submitted_version = s->tree.version();
      s->jobs.emplace(job->id, job);
    }
    auto reply = job_json(*s, *job);  // before the worker can touch the job
    ++in_flight_;
    pool_.submit([this, s, job] {
      run_job(*s, *job);
      if (--in_flight_ == 0) {
        std::lock_guard lock(idle_mutex_);
        idle_cv_.notify_all();
      }
    });
    return reply;
  }

  ojson job(const std::string& id, std::uint64_t job_id) {
    const auto s = session(id);
    std::lock_guard lock(s->mutex);
    auto it = s->jobs.find(job_id);
    if (it == s->jobs.end()) fail(ErrorCode::JobNotFound, "no job " + std::to_string(job_id));
    return job_json(*s, *it->second);
  }

  ojson reward(const std::string& id) {
    const auto s = session(id);
    const auto snap = s->snapshot();
    ojson j = ojson::object();
    j["version"] = snap->version();
    j["total_chars"] = snap->ledger().total_chars();
    j["bonus"] = compute_bonus(snap->ledger()).str();
    j["bonus_cents"] = compute_bonus(snap->ledger()).cents;
    j["reward_rate"] = snap->ledger().reward_rate;
    j["validated_count"] = snap->validated_count();
    const auto remaining = std::max<Timestamp>(0, s->deadline - options_.clock());
    j["timer_remaining_seconds"] = remaining / 1000;
    j["timer_expired"] = remaining == 0;
    return j;
  }

  ojson events(const std::string& id, std::uint64_t since) {
    const auto s = session(id);
    const auto snap = s->snapshot();
    ojson events = ojson::array();
    for (const auto& e : snap->events()) {
      if (e.version > since) events.push_back(storage::to_json(e));
    }
    return {{"version", snap->version()}, {"events", std::move(events)}};
  }

  std::string export_session(const std::string& id) { return storage::session_to_string(*session(id)->snapshot()); }

  ojson audit() const {
    ojson out = ojson::array();
    for (const auto& e : gateway_->audit().entries()) out.push_back(ojson::parse(e.to_json().dump()));
    return out;
  }

  /// Blocks until no generation job is queued or running.
  void wait_idle() {
    std::unique_lock lock(idle_mutex_);
    idle_cv_.wait(lock, [&] { return in_flight_.load() == 0; });
  }

  [[nodiscard]] double threshold() const { return options_.config.uncertainty_threshold; }

 private:
  struct Session {
    explicit Session(KnowledgeTree t) : tree(std::move(t)), snap(std::make_shared<const KnowledgeTree>(tree)) {}

    std::shared_ptr<const KnowledgeTree> snapshot() const {
      std::lock_guard lock(snap_mutex);
      return snap;
    }

    void publish() {
      auto next = std::make_shared<const KnowledgeTree>(tree);
      std::lock_guard lock(snap_mutex);
      snap = std::move(next);
    }

    std::string id;
    std::string token;
    Timestamp deadline = 0;
    std::mutex mutex;  // serializes mutations
    KnowledgeTree tree;
    mutable std::mutex snap_mutex;
    std::shared_ptr<const KnowledgeTree> snap;
    std::uint64_t next_job = 0;
    std::map<std::uint64_t, std::shared_ptr<GenerationJob>> jobs;
  };

  std::string random_hex() {
    std::lock_guard lock(rng_mutex_);
    return text::to_hex(rng_()) + text::to_hex(rng_());
  }

  void register_session(const std::shared_ptr<Session>& s) {
    s->deadline = options_.clock() + static_cast<Timestamp>(options_.config.timer_minutes) * 60'000;
    s->token = random_hex();
    std::unique_lock lock(sessions_mutex_);
    s->id = "s" + std::to_string(sessions_.size() + 1) + "-" + random_hex().substr(0, 8);
    sessions_.emplace(s->id, s);
  }

  std::shared_ptr<Session> session(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(ErrorCode::UnknownSession, "no session '" + id + "'");
    return it->second;
  }

  ojson session_handle(const Session& s, bool with_token) {
    ojson j = ojson::object();
    j["session_id"] = s.id;
    if (with_token) j["token"] = s.token;
    j["version"] = s.snapshot()->version();
    j["annotator"] = s.snapshot()->meta().annotator;
    j["timer_deadline_ms"] = s.deadline;
    return j;
  }

  void annotate(const KnowledgeTree& t, ojson& n) const {
    const NodeId nid{n["id"].get<std::uint64_t>()};
    const auto& node = t.node(nid);
    n["depth"] = t.depth(nid);
    n["human_edited"] = t.human_edited(nid);
    if (node.confidence) n["uncertain"] = llm::is_uncertain(*node.confidence, threshold());
    if (node.kind == NodeKind::Question) {
      try {
        n["difficulty"] = to_string(question_difficulty(t, nid, threshold()));
      } catch (const Error&) {
        n["difficulty"] = nullptr;
      }
    }
  }

  template <typename Fn>
  ojson mutate(const std::string& id, const nlohmann::json& body, Fn&& fn) {
    const auto s = session(id);
    if (!body.contains("expected_version")) fail(ErrorCode::InvalidArgument, "expected_version is required");
    const auto expected = body.at("expected_version").get<std::uint64_t>();
    std::lock_guard lock(s->mutex);
    if (expected != s->tree.version()) {
      fail(ErrorCode::VersionConflict, "expected version " + std::to_string(expected) + ", current " +
                                           std::to_string(s->tree.version()));
    }
    ojson out = ojson::object();
    const auto before = s->tree.events().size();
    fn(s->tree, out);
    s->publish();
    out["version"] = s->tree.version();
    ojson events = ojson::array();
    for (std::size_t i = before; i < s->tree.events().size(); ++i) events.push_back(storage::to_json(s->tree.events()[i]));
    out["events"] = std::move(events);
    return out;
  }

  void run_job(Session& s, GenerationJob& job) {
    GenerationPlan plan;
    const auto& set = templates_.for_country(s.snapshot()->meta().country);
    try {
      {
        std::lock_guard lock(s.mutex);
        job.status = JobStatus::Running;
        plan = prepare_generation(s.tree, set, job.kind, job.target, job.n, elicitation_);
      }
      const auto result = run_generation(*gateway_, plan, elicitation_);
      std::lock_guard lock(s.mutex);
      job.created = apply_generation(s.tree, plan, result);
      s.publish();
      job.applied_version = s.tree.version();
      job.status = JobStatus::Applied;
    } catch (const std::exception& e) {
      std::lock_guard lock(s.mutex);
      job.error = e.what();
      job.status = JobStatus::Failed;
    }
  }

  ojson job_json(Session& s, const GenerationJob& job) {
    (void)s;
    ojson j = ojson::object();
    j["job_id"] = job.id;
    j["kind"] = to_string(job.kind);
    j["target"] = job.target.value;
    j["n"] = job.n;
    j["status"] = to_string(job.status);
    j["submitted_version"] = job.submitted_version;
    if (job.status == JobStatus::Applied) j["applied_version"] = job.applied_version;
    std::vector<std::uint64_t> created;
    for (NodeId c : job.created) created.push_back(c.value);
    j["created"] = created;
    if (!job.error.empty()) j["error"] = job.error;
    return j;
  }

  ServiceOptions options_;
  std::shared_ptr<llm::Gateway> gateway_;
  llm::TemplateRegistry templates_;
  ElicitationOptions elicitation_;
  std::mt19937_64 rng_;
  std::mutex rng_mutex_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::atomic<std::size_t> in_flight_{0};
  std::mutex idle_mutex_;
  std::condition_variable idle_cv_;
  WorkerPool pool_;  // last: joined before the state it touches is destroyed
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownNode:
    case ErrorCode::JobNotFound:
      return 404;
    case ErrorCode::VersionConflict:
      return 409;
    case ErrorCode::Unauthorized:
      return 401;
    case ErrorCode::InvalidArgument:
    case ErrorCode::CorruptFile:
    case ErrorCode::SchemaVersionMismatch:
      return 400;
    case ErrorCode::ProviderUnavailable:
      return 502;
    case ErrorCode::Timeout:
      return 504;
    default:
      return 422;
  }
}

inline nlohmann::json error_json(ErrorCode code, const std::string& message) {
  return {{"error", {{"code", std::string(to_string(code))}, {"message", message}}}};
}

/// HTTP+JSON front end under /api/v1.
class HttpServer {
 public:
  explicit HttpServer(SessionService& service) : service_(service) { routes(); }

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    if (!server_.bind_to_port(host, port)) fail(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
    return port;
  }

  void listen_after_bind() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  static nlohmann::json body_of(const Req& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorCode::InvalidArgument, "request body must be a JSON object");
    return j;
  }

  static std::string bearer(const Req& req) {
    const auto h = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    return h.starts_with(prefix) ? h.substr(prefix.size()) : std::string();
  }

  template <typename Fn>
  void handle(const Req& req, Res& res, bool needs_token, Fn&& fn) {
    try {
      if (needs_token) service_.authorize(req.matches[1], bearer(req));
      fn(req, res);
    } catch (const Error& e) {
      res.status = http_status(e.code());
      res.set_content(error_json(e.code(), e.message()).dump(), "application/json");
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(error_json(ErrorCode::InvalidArgument, e.what()).dump(), "application/json");
    }
  }

  static void reply(Res& res, const ojson& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  void routes() {
    const std::string s = R"(/api/v1/sessions/([A-Za-z0-9-]+))";
    const std::string n = R"(/nodes/(\d+))";
    server_.Post("/api/v1/sessions", [this](const Req& req, Res& res) {
      handle(req, res, false, [&](const Req& r, Res& out) { reply(out, service_.create_session(body_of(r)), 201); });
    });
    server_.Post("/api/v1/sessions/import", [this](const Req& req, Res& res) {
      handle(req, res, false, [&](const Req& r, Res& out) { reply(out, service_.import_session(r.body), 201); });
    });
    server_.Get(s + "/tree", [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) { reply(out, service_.tree(r.matches[1])); });
    });
    server_.Post(s + "/nodes", [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) { reply(out, service_.add_node(r.matches[1], body_of(r)), 201); });
    });
    server_.Patch(s + n, [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) {
        reply(out, service_.edit_node(r.matches[1], std::stoull(r.matches[2]), body_of(r)));
      });
    });
    server_.Delete(s + n, [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) {
        auto body = body_of(r);
        if (r.has_param("expected_version")) body["expected_version"] = std::stoull(r.get_param_value("expected_version"));
        reply(out, service_.delete_node(r.matches[1], std::stoull(r.matches[2]), body));
      });
    });
    server_.Post(s + n + "/validate", [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) {
        reply(out, service_.validate_node(r.matches[1], std::stoull(r.matches[2]), body_of(r)));
      });
    });
    server_.Post(s + n + "/score", [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) {
        reply(out, service_.score_node(r.matches[1], std::stoull(r.matches[2]), body_of(r)));
      });
    });
    server_.Post(s + "/generate", [this](const Req& req, Res& res) {
      handle(req, res, true,
             [&](const Req& r, Res& out) { reply(out, service_.request_generation(r.matches[1], body_of(r)), 202); });
    });
    server_.Get(s + R"(/jobs/(\d+))", [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) { reply(out, service_.job(r.matches[1], std::stoull(r.matches[2]))); });
    });
    server_.Get(s + "/reward", [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) { reply(out, service_.reward(r.matches[1])); });
    });
    server_.Get(s + "/events", [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) {
        const std::uint64_t since = r.has_param("since") ? std::stoull(r.get_param_value("since")) : 0;
        reply(out, service_.events(r.matches[1], since));
      });
    });
    server_.Get(s + "/export", [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req& r, Res& out) {
        out.set_header("Content-Disposition", "attachment; filename=\"" + std::string(r.matches[1]) + ".json\"");
        out.set_content(service_.export_session(r.matches[1]), "application/json");
      });
    });
    server_.Get(s + "/audit", [this](const Req& req, Res& res) {
      handle(req, res, true, [&](const Req&, Res& out) { reply(out, service_.audit()); });
    });
    server_.Get("/api/v1/health", [](const Req&, Res& res) { res.set_content(R"({"ok":true})", "application/json"); });
  }

  SessionService& service_;
  httplib::Server server_;
};

}  // namespace carto::service
