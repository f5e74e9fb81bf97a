#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "carto/llm/gateway.hpp"
#include "carto/llm/http_provider.hpp"
#include "carto/llm/mock_provider.hpp"
#include "carto/llm/prompt.hpp"
#include "carto/llm/replay_provider.hpp"
#include "carto/parallel.hpp"
#include "support.hpp"

using namespace carto;
using namespace carto::llm;
using testing_support::code_of;
using testing_support::mock_gateway;

namespace {

/// Reference scanner: every close marker pairs with the nearest unconsumed
/// open marker before it.
std::vector<std::string> scan_tags(const std::string& s, const std::string& tag) {
  const std::string open = "<" + tag + ">", close = "</" + tag + ">";
  std::vector<std::string> out;
  std::size_t cursor = 0;
  for (std::size_t c = s.find(close); c != std::string::npos; c = s.find(close, c + 1)) {
    if (c < cursor) continue;
    std::size_t best = std::string::npos;
    for (std::size_t o = s.find(open, cursor); o != std::string::npos && o + open.size() <= c; o = s.find(open, o + 1)) {
      best = o;
    }
    if (best == std::string::npos) continue;
    std::string inner = s.substr(best + open.size(), c - best - open.size());
    const auto b = inner.find_first_not_of(" \t\r\n");
    const auto e = inner.find_last_not_of(" \t\r\n");
    inner = b == std::string::npos ? "" : inner.substr(b, e - b + 1);
    if (!inner.empty()) out.push_back(inner);
    cursor = c + close.size();
  }
  return out;
}

class FlakyProvider : public Provider {
 public:
  explicit FlakyProvider(int failures, ErrorCode code = ErrorCode::ProviderUnavailable)
      : failures_(failures), code_(code) {
    profile_.max_retries = 3;
  }
  const ProviderProfile& profile() const override { return profile_; }
  std::string complete(const ChatRequest& r) override {
    if (failures_-- > 0) fail(code_, "flaky");
    return "ok:" + r.last_user_content();
  }
  ProviderProfile profile_;

 private:
  int failures_;
  ErrorCode code_;
};

GatewayOptions fast() {
  GatewayOptions o;
  o.backoff_base = std::chrono::milliseconds(0);
  return o;
}

}  // namespace

TEST(Prompt, RenderNigerianQuestionTemplate) {
  const auto tmpl = nigerian_question_template();
  const auto p = render_prompt(tmpl, "Gifts");
  EXPECT_NE(p.find("List any customs or traditions related to the preparation and presentation of gifts"), std::string::npos);
  EXPECT_NE(p.find("cultural concept:Gifts\n examples:"), std::string::npos);
  EXPECT_EQ(p, render_prompt(tmpl, "Gifts"));
  // everything outside the placeholder is byte-identical
  const auto pos = tmpl.text.find("{{concept}}");
  EXPECT_EQ(p.substr(0, pos), tmpl.text.substr(0, pos));
  EXPECT_EQ(p.substr(pos + 5), tmpl.text.substr(pos + 11));
}

TEST(Prompt, RenderErrors) {
  PromptTemplate none{"t", "nga", "en", "no placeholder here", {"question"}};
  EXPECT_EQ(code_of([&] { render_prompt(none, "Gifts"); }), ErrorCode::MissingPlaceholder);
  EXPECT_EQ(code_of([&] { render_prompt(nigerian_question_template(), "  "); }), ErrorCode::InvalidArgument);
  PromptTemplate twice{"t", "nga", "en", "{{concept}} and {{concept}}", {"question"}};
  EXPECT_EQ(code_of([&] { render_prompt(twice, "x"); }), ErrorCode::InvalidArgument);
}

TEST(Prompt, EveryBuiltInTemplateHasOnePlaceholder) {
  TemplateRegistry reg;
  for (const char* c : {"nga", "idn"}) {
    const auto& set = reg.for_country(c);
    EXPECT_EQ(count_occurrences(set.questions.text, kConceptPlaceholder), 1u);
    EXPECT_EQ(count_occurrences(set.answers.text, kConceptPlaceholder), 1u);
    EXPECT_FALSE(set.questions.tags.empty());
  }
  EXPECT_EQ(code_of([&] { (void)reg.for_country("xyz"); }), ErrorCode::InvalidArgument);
}

TEST(TaggedItems, Examples) {
  EXPECT_EQ(parse_tagged_items("<question>a</question> junk <question> b </question>", "question", 5),
            (std::vector<std::string>{"a", "b"}));
  std::string six;
  for (int i = 0; i < 6; ++i) six += "<question>q" + std::to_string(i) + "</question>";
  const auto five = parse_tagged_items(six, "question", 5);
  ASSERT_EQ(five.size(), 5u);
  EXPECT_EQ(five.back(), "q4");
  EXPECT_TRUE(parse_tagged_items("nothing", "question", 5).empty());
}

TEST(TaggedItems, MatchesReferenceScannerOnCorpus) {
  const std::vector<std::string> corpus{
      "<question>a</question>",
      "<question>unclosed <question>b</question>",
      "<question>x</question></question><question>y</question>",
      "</question><question>after stray</question>",
      "<question><question>nested</question></question>",
      "<question>   </question><question>z</question>",
      "<question>trailing",
      "<questions>not it</questions><question>ok</question>",
      "<question>multi\nline</question>",
  };
  for (const auto& s : corpus) {
    const auto got = parse_tagged_items(s, "question", SIZE_MAX);
    EXPECT_EQ(got, scan_tags(s, "question")) << s;
    for (const auto& g : got) {
      EXPECT_EQ(g.find("<question>"), std::string::npos);
      EXPECT_EQ(g.find("</question>"), std::string::npos);
    }
  }
}

TEST(TaggedItems, RandomStringsNeverExceedCapOrLeakMarkers) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> pieces{"<question>", "</question>", "a", " ", "b", "<", ">", "/"};
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    for (int k = 0; k < 12; ++k) s += pieces[rng() % pieces.size()];
    const std::size_t cap = rng() % 4;
    const auto got = parse_tagged_items(s, "question", cap);
    ASSERT_LE(got.size(), cap);
    auto ref = scan_tags(s, "question");
    if (ref.size() > cap) ref.resize(cap);
    ASSERT_EQ(got, ref) << s;
  }
}

TEST(LocalityAnswers, Examples) {
  const auto items = parse_locality_answers(
      "<universal>u</universal> <other>skip</other><local>l</local>\n<unique>Alaga: a heckling officiant</unique>");
  ASSERT_EQ(items.size(), 3u);
  EXPECT_EQ(items[0], (LocalizedAnswer{Locality::Universal, "u"}));
  EXPECT_EQ(items[1], (LocalizedAnswer{Locality::Local, "l"}));
  EXPECT_EQ(items[2], (LocalizedAnswer{Locality::Unique, "Alaga: a heckling officiant"}));
  EXPECT_EQ(parse_locality_answers("<local>a</local><unique>b</unique>", 1).size(), 1u);
  EXPECT_EQ(parse_locality_answers("<local>open <unique>c</unique>").size(), 1u);
}

TEST(Confidence, ThresholdBoundary) {
  EXPECT_TRUE(is_uncertain(0.40));
  EXPECT_FALSE(is_uncertain(0.41));
  EXPECT_FALSE(is_uncertain(1.0));
  EXPECT_TRUE(is_uncertain(0.0));
  EXPECT_EQ(code_of([] { is_uncertain(1.2); }), ErrorCode::InvalidArgument);
}

TEST(Confidence, ProbeUsesVerbatimQuestion) {
  EXPECT_NE(probe_prompt("q", "a").find("Does this answer the question correctly?"), std::string::npos);
}

TEST(Confidence, TokenChoicePassthrough) {
  MockOptions opts;
  opts.fixed_confidence = 0.73;
  auto s = mock_gateway(opts);
  EXPECT_DOUBLE_EQ(answer_confidence(*s.gateway, "q", "a"), 0.73);
  s.mock->set_token_choice([](const TokenChoiceQuery&) { return 1.5; });
  EXPECT_EQ(code_of([&] { answer_confidence(*s.gateway, "q", "a"); }), ErrorCode::MalformedProbeResponse);
}

TEST(Confidence, FallbackIsSampledFraction) {
  ProviderProfile profile;
  profile.supports_token_choice_probabilities = false;
  auto s = mock_gateway({}, profile);
  std::vector<ChatRequest> seen;
  std::mutex m;
  s.mock->set_script([&](const ChatRequest& r, std::size_t i) {
    std::lock_guard lock(m);
    seen.push_back(r);
    return i % 10 < 7 ? "True" : "False.";
  });
  EXPECT_DOUBLE_EQ(answer_confidence(*s.gateway, "q", "a"), 0.7);
  ASSERT_EQ(seen.size(), 10u);
  for (const auto& r : seen) {
    EXPECT_EQ(r.decode.temperature, 1.0);
    EXPECT_NE(r.last_user_content().find(kProbeQuestion), std::string::npos);
  }
  s.mock->set_script([](const ChatRequest&, std::size_t) { return "maybe"; });
  EXPECT_EQ(code_of([&] { answer_confidence(*s.gateway, "q", "a"); }), ErrorCode::MalformedProbeResponse);
}

TEST(Gateway, EchoProvider) {
  Gateway g(std::make_shared<EchoProvider>(), fast());
  EXPECT_EQ(g.complete("hello"), "hello");
  EXPECT_EQ(code_of([&] { g.complete("  "); }), ErrorCode::InvalidArgument);
}

TEST(Gateway, RetriesThenSucceeds) {
  Gateway g(std::make_shared<FlakyProvider>(2), fast());
  EXPECT_EQ(g.complete("x"), "ok:x");
  const auto log = g.audit().entries();
  ASSERT_EQ(log.size(), 3u);
  EXPECT_FALSE(log[0].ok);
  EXPECT_FALSE(log[1].ok);
  EXPECT_TRUE(log[2].ok);
  EXPECT_EQ(log[2].attempt, 3);
  EXPECT_EQ(log[0].key, log[2].key);
}

TEST(Gateway, RetriesExhausted) {
  Gateway g(std::make_shared<FlakyProvider>(10), fast());
  EXPECT_EQ(code_of([&] { g.complete("x"); }), ErrorCode::ProviderUnavailable);
  EXPECT_EQ(g.audit().size(), 4u);
  Gateway t(std::make_shared<FlakyProvider>(10, ErrorCode::Timeout), fast());
  EXPECT_EQ(code_of([&] { t.complete("x"); }), ErrorCode::Timeout);
}

TEST(Gateway, NonTransientErrorsAreNotRetried) {
  Gateway g(std::make_shared<FlakyProvider>(1, ErrorCode::InvalidArgument), fast());
  EXPECT_EQ(code_of([&] { g.complete("x"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(g.audit().size(), 1u);
}

TEST(Gateway, BackoffGrowsExponentially) {
  GatewayOptions o;
  o.backoff_base = std::chrono::milliseconds(20);
  Gateway g(std::make_shared<FlakyProvider>(2), o);
  const auto start = std::chrono::steady_clock::now();
  g.complete("x");
  EXPECT_GE(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(60));  // 20 + 40
}

TEST(Gateway, BoundsInFlightCalls) {
  struct Slow : Provider {
    ProviderProfile p;
    std::atomic<int> now{0}, peak{0};
    const ProviderProfile& profile() const override { return p; }
    std::string complete(const ChatRequest&) override {
      const int n = ++now;
      int prev = peak.load();
      while (n > prev && !peak.compare_exchange_weak(prev, n)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      --now;
      return "x";
    }
  };
  auto slow = std::make_shared<Slow>();
  GatewayOptions o = fast();
  o.max_in_flight = 2;
  Gateway g(slow, o);
  parallel_for(16, 8, [&](std::size_t i) { g.complete("p" + std::to_string(i)); });
  EXPECT_LE(slow->peak.load(), 2);
  EXPECT_GE(slow->peak.load(), 1);
}

TEST(Gateway, MockIsDeterministic) {
  auto run = [] {
    auto s = mock_gateway(MockOptions{5});
    s.gateway->complete(render_prompt(nigerian_question_template(), "Gifts"));
    s.gateway->complete(render_prompt(nigerian_answer_template(), "List gifts."));
    s.gateway->token_choice({probe_prompt("q", "a"), "True", "False"});
    s.gateway->embed({"community feast", "prayer"});
    return s.gateway->audit().dump_jsonl();
  };
  EXPECT_EQ(run(), run());
}

TEST(Gateway, MockRepliesParseAsTemplatesExpect) {
  auto s = mock_gateway();
  const auto qs = parse_tagged_items(s.gateway->complete(render_prompt(nigerian_question_template(), "Gifts")), "question", 5);
  ASSERT_EQ(qs.size(), 5u);
  for (const auto& q : qs) EXPECT_EQ(q.rfind("List", 0), 0u);
  const auto as = parse_locality_answers(s.gateway->complete(render_prompt(nigerian_answer_template(), "List gifts.")));
  EXPECT_EQ(as.size(), 5u);
}

TEST(ReplayProvider, ServesRecordedResponsesInOrder) {
  auto s = mock_gateway();
  s.mock->set_script([](const ChatRequest&, std::size_t i) { return "reply " + std::to_string(i); });
  s.gateway->complete("a");
  s.gateway->complete("a");
  s.gateway->complete("b");
  Gateway replay(std::make_shared<ReplayProvider>(s.gateway->audit().entries()), fast());
  EXPECT_EQ(replay.complete("a"), "reply 0");
  EXPECT_EQ(replay.complete("a"), "reply 1");
  EXPECT_EQ(replay.complete("a"), "reply 1");
  EXPECT_EQ(replay.complete("b"), "reply 2");
  auto profile = replay.profile();
  EXPECT_EQ(profile.name, "replay");
}

TEST(ReplayProvider, ReadsAuditFileAndFailsOnUnknownRequests) {
  testing_support::TempDir dir;
  GatewayOptions o = fast();
  o.audit_path = dir.file("audit.jsonl");
  {
    Gateway g(std::make_shared<EchoProvider>(), o);
    g.complete("hello");
  }
  ProviderProfile p;
  p.max_retries = 0;
  Gateway replay(std::make_shared<ReplayProvider>(ReplayProvider::read_log(o.audit_path), p), fast());
  EXPECT_EQ(replay.complete("hello"), "hello");
  EXPECT_EQ(code_of([&] { replay.complete("other"); }), ErrorCode::ProviderUnavailable);
  EXPECT_EQ(code_of([&] { ReplayProvider::read_log(dir.file("missing")); }), ErrorCode::IoError);
}

namespace {

/// Minimal OpenAI-style endpoint on a free local port.
struct FakeEndpoint {
  httplib::Server server;
  int port = 0;
  std::thread thread;
  std::atomic<int> status{200};
  std::string last_body;
  std::string last_auth;
  std::mutex m;

  FakeEndpoint() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(m);
        last_body = req.body;
        last_auth = req.get_header_value("Authorization");
      }
      if (status != 200) {
        res.status = status;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      nlohmann::json reply;
      if (body.value("logprobs", false)) {
        reply["choices"] = {{{"message", {{"content", "True"}}},
                             {"logprobs", {{"content", {{{"token", "True"}, {"top_logprobs", {{{"token", "True"}, {"logprob", std::log(0.6)}}, {{"token", " false"}, {"logprob", std::log(0.2)}}, {{"token", "Maybe"}, {"logprob", std::log(0.2)}}}}}}}}}}};
      } else {
        reply["choices"] = {{{"message", {{"content", "echo:" + body["messages"].back()["content"].get<std::string>()}}}}};
      }
      res.set_content(reply.dump(), "application/json");
    });
    server.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      nlohmann::json data = nlohmann::json::array();
      for (std::size_t i = 0; i < body["input"].size(); ++i) data.push_back({{"embedding", {double(i), 1.0}}});
      res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeEndpoint() {
    server.stop();
    thread.join();
  }
  ProviderProfile profile() const {
    ProviderProfile p;
    p.name = "fake";
    p.model = "fake-model";
    p.endpoint = "http://127.0.0.1:" + std::to_string(port);
    p.timeout = std::chrono::milliseconds(2000);
    p.max_retries = 0;
    return p;
  }
};

}  // namespace

TEST(HttpProvider, ChatLogprobsAndEmbeddings) {
  FakeEndpoint fake;
  setenv("CARTO_PROVIDER_API_KEY", "sk-test", 1);
  HttpProvider provider(fake.profile());
  EXPECT_EQ(provider.complete(ChatRequest::single("hi")), "echo:hi");
  EXPECT_EQ(fake.last_auth, "Bearer sk-test");
  EXPECT_EQ(nlohmann::json::parse(fake.last_body)["model"], "fake-model");
  EXPECT_NEAR(provider.token_choice({"p", "True", "False"}), 0.75, 1e-12);
  const auto v = provider.embed({"a", "b"});
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[1], (std::vector<double>{1.0, 1.0}));
  unsetenv("CARTO_PROVIDER_API_KEY");
}

TEST(HttpProvider, WebSearchProfileDropsTemperature) {
  FakeEndpoint fake;
  auto p = fake.profile();
  p.supports_web_search = true;
  HttpProvider provider(p);
  provider.complete(ChatRequest::single("hi"));
  const auto body = nlohmann::json::parse(fake.last_body);
  EXPECT_FALSE(body.contains("temperature"));
  EXPECT_TRUE(body.contains("web_search_options"));
}

TEST(HttpProvider, MapsStatusCodes) {
  FakeEndpoint fake;
  HttpProvider provider(fake.profile());
  fake.status = 503;
  EXPECT_EQ(code_of([&] { provider.complete(ChatRequest::single("x")); }), ErrorCode::ProviderUnavailable);
  fake.status = 429;
  EXPECT_EQ(code_of([&] { provider.complete(ChatRequest::single("x")); }), ErrorCode::ProviderUnavailable);
  fake.status = 408;
  EXPECT_EQ(code_of([&] { provider.complete(ChatRequest::single("x")); }), ErrorCode::Timeout);
  fake.status = 400;
  EXPECT_EQ(code_of([&] { provider.complete(ChatRequest::single("x")); }), ErrorCode::InvalidArgument);
  auto dead = fake.profile();
  dead.endpoint = "http://127.0.0.1:1";
  EXPECT_EQ(code_of([&] { HttpProvider(dead).complete(ChatRequest::single("x")); }), ErrorCode::ProviderUnavailable);
  dead.endpoint = "";
  EXPECT_EQ(code_of([&] { HttpProvider{dead}; }), ErrorCode::InvalidArgument);
}
