#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carto/error.hpp"
#include "carto/llm/gateway.hpp"
#include "carto/llm/http_provider.hpp"
#include "carto/llm/mock_provider.hpp"
#include "carto/llm/replay_provider.hpp"
#include "carto/storage.hpp"

namespace carto {

struct ProviderConfig {
  std::string kind = "mock";  // mock | openai | replay
  llm::ProviderProfile profile;
  std::string embed_model = "text-embedding-3-small";
  std::string replay_log;  // replay: audit log to serve from
  std::map<std::string, std::vector<std::string>> knowledge;  // mock: answers it leads with per question
};

struct Config {
  std::map<std::string, ProviderConfig> providers;
  std::string default_provider = "mock";
  std::string judge_provider = "mock";
  double reward_rate = 0.005;
  double uncertainty_threshold = 0.4;
  int timer_minutes = 60;
  int max_in_flight = 8;
  std::string audit_log;
  std::size_t max_depth = 10;
  std::size_t workers = 4;
  std::string host = "127.0.0.1";
  int port = 8080;

  Config() {
    ProviderConfig mock;
    mock.profile.name = "mock";
    mock.profile.model = "mock";
    providers.emplace("mock", mock);
  }

  [[nodiscard]] const ProviderConfig& provider(const std::string& name) const {
    auto it = providers.find(name);
    if (it == providers.end()) fail(ErrorCode::InvalidArgument, "unknown provider '" + name + "'");
    return it->second;
  }
};

inline ProviderConfig provider_from_json(const std::string& name, const nlohmann::json& j) {
  ProviderConfig p;
  p.kind = j.value("kind", "mock");
  if (p.kind != "mock" && p.kind != "openai" && p.kind != "replay") {
    fail(ErrorCode::InvalidArgument, "provider '" + name + "' has unknown kind '" + p.kind + "'");
  }
  p.profile.name = name;
  p.profile.model = j.value("model", name);
  p.profile.endpoint = j.value("endpoint", "");
  p.profile.supports_token_choice_probabilities = j.value("supports_token_choice_probabilities", true);
  p.profile.supports_web_search = j.value("supports_web_search", false);
  const auto timeout = j.value("timeout_ms", std::int64_t{60000});
  if (timeout <= 0) fail(ErrorCode::InvalidArgument, "provider '" + name + "' timeout must be positive");
  p.profile.timeout = std::chrono::milliseconds(timeout);
  p.profile.max_retries = j.value("max_retries", 3);
  if (p.profile.max_retries < 0) fail(ErrorCode::InvalidArgument, "provider '" + name + "' retries must be >= 0");
  p.embed_model = j.value("embed_model", p.embed_model);
  p.replay_log = j.value("replay_log", "");
  if (j.contains("knowledge")) p.knowledge = j.at("knowledge").get<std::map<std::string, std::vector<std::string>>>();
  return p;
}

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  try {
    if (j.contains("providers")) {
      for (const auto& [name, pj] : j.at("providers").items()) c.providers[name] = provider_from_json(name, pj);
    }
    c.default_provider = j.value("default_provider", c.default_provider);
    c.judge_provider = j.value("judge_provider", c.default_provider);
    c.reward_rate = j.value("reward_rate", c.reward_rate);
    c.uncertainty_threshold = j.value("uncertainty_threshold", c.uncertainty_threshold);
    c.timer_minutes = j.value("timer_minutes", c.timer_minutes);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.audit_log = j.value("audit_log", c.audit_log);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.workers = j.value("workers", c.workers);
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("bad config: ") + e.what());
  }
  if (c.reward_rate < 0) fail(ErrorCode::InvalidArgument, "reward_rate must be >= 0");
  if (!(c.uncertainty_threshold >= 0 && c.uncertainty_threshold <= 1)) {
    fail(ErrorCode::InvalidArgument, "uncertainty_threshold must lie in [0,1]");
  }
  if (c.max_in_flight < 1) fail(ErrorCode::InvalidArgument, "max_in_flight must be >= 1");
  (void)c.provider(c.default_provider);
  (void)c.provider(c.judge_provider);
  return c;
}

inline Config load_config(const std::string& path) {
  auto j = nlohmann::json::parse(storage::read_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::InvalidArgument, "config " + path + " is not valid JSON");
  return config_from_json(j);
}

inline std::shared_ptr<llm::Provider> make_provider(const ProviderConfig& p, std::uint64_t seed = 0) {
  if (p.kind == "mock") {
    llm::MockOptions opts;
    opts.seed = seed;
    auto mock = std::make_shared<llm::MockProvider>(p.profile, opts);
    if (!p.knowledge.empty()) mock->set_knowledge(p.knowledge);
    return mock;
  }
  if (p.kind == "openai") return std::make_shared<llm::HttpProvider>(p.profile, p.embed_model);
  if (p.replay_log.empty()) fail(ErrorCode::InvalidArgument, "replay provider needs replay_log");
  return std::make_shared<llm::ReplayProvider>(llm::ReplayProvider::read_log(p.replay_log), p.profile);
}

inline std::shared_ptr<llm::Gateway> make_gateway(const Config& c, const std::string& provider, std::uint64_t seed = 0,
                                                  const std::string& audit_path = "") {
  llm::GatewayOptions opts;
  opts.max_in_flight = c.max_in_flight;
  opts.audit_path = audit_path.empty() ? c.audit_log : audit_path;
  return std::make_shared<llm::Gateway>(make_provider(c.provider(provider), seed), opts);
}

}  // namespace carto
