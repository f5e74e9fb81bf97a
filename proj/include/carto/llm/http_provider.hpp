#pragma once

#include <cmath>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "carto/error.hpp"
#include "carto/llm/provider.hpp"
#include "carto/text.hpp"

namespace carto::llm {

inline constexpr const char* kProviderKeyEnv = "CARTO_PROVIDER_API_KEY";
inline constexpr const char* kEmbedKeyEnv = "CARTO_EMBED_API_KEY";

inline std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

/// Client for OpenAI-compatible chat, logprob and embedding endpoints.
/// `profile.endpoint` is the scheme+host base URL, e.g. "https://api.openai.com".
class HttpProvider : public Provider {
 public:
  explicit HttpProvider(ProviderProfile profile, std::string embed_model = "text-embedding-3-small")
      : profile_(std::move(profile)),
        embed_model_(std::move(embed_model)),
        api_key_(env_or_empty(kProviderKeyEnv)),
        embed_key_(env_or_empty(kEmbedKeyEnv)) {
    if (profile_.endpoint.empty()) fail(ErrorCode::InvalidArgument, "provider endpoint is empty");
    if (embed_key_.empty()) embed_key_ = api_key_;
  }

  const ProviderProfile& profile() const override { return profile_; }

  std::string complete(const ChatRequest& request) override {
    nlohmann::json body = to_json(request);
    body["model"] = profile_.model;
    if (profile_.supports_web_search) {
      // search-enabled chat models reject sampling parameters
      body.erase("temperature");
      body["web_search_options"] = nlohmann::json::object();
    }
    const auto reply = post("/v1/chat/completions", body, api_key_);
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ProviderUnavailable, std::string("unexpected completion payload: ") + e.what());
    }
  }

  double token_choice(const TokenChoiceQuery& query) override {
    if (!profile_.supports_token_choice_probabilities) return Provider::token_choice(query);
    nlohmann::json body = to_json(ChatRequest::single(query.prompt, DecodeOptions{0.0, 1}));
    body["model"] = profile_.model;
    body["logprobs"] = true;
    body["top_logprobs"] = 20;
    const auto reply = post("/v1/chat/completions", body, api_key_);
    double pos = 0.0;
    double neg = 0.0;
    try {
      for (const auto& cand : reply.at("choices").at(0).at("logprobs").at("content").at(0).at("top_logprobs")) {
        const auto token = text::to_lower_ascii(text::trim(cand.at("token").get<std::string>()));
        const double p = std::exp(cand.at("logprob").get<double>());
        if (token == text::to_lower_ascii(query.positive)) pos += p;
        if (token == text::to_lower_ascii(query.negative)) neg += p;
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MalformedProbeResponse, std::string("no logprobs in reply: ") + e.what());
    }
    if (pos + neg <= 0.0) fail(ErrorCode::MalformedProbeResponse, "neither option among top tokens");
    return pos / (pos + neg);
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    const auto reply = post("/v1/embeddings", {{"model", embed_model_}, {"input", texts}}, embed_key_);
    std::vector<std::vector<double>> out;
    try {
      for (const auto& item : reply.at("data")) out.push_back(item.at("embedding").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ProviderUnavailable, std::string("unexpected embedding payload: ") + e.what());
    }
    return out;
  }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body, const std::string& key) const {
    httplib::Client client(profile_.endpoint);
    client.set_connection_timeout(profile_.timeout);
    client.set_read_timeout(profile_.timeout);
    client.set_write_timeout(profile_.timeout);
    httplib::Headers headers;
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
        fail(ErrorCode::Timeout, "request to " + profile_.endpoint + path + " timed out");
      }
      fail(ErrorCode::ProviderUnavailable, "request failed: " + httplib::to_string(err));
    }
    if (res->status == 408) fail(ErrorCode::Timeout, "provider returned 408");
    if (res->status == 429 || res->status >= 500) {
      fail(ErrorCode::ProviderUnavailable, "provider returned " + std::to_string(res->status));
    }
    if (res->status >= 400) {
      fail(ErrorCode::InvalidArgument, "provider rejected request (" + std::to_string(res->status) + "): " + res->body);
    }
    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) fail(ErrorCode::ProviderUnavailable, "provider returned invalid JSON");
    return parsed;
  }

  ProviderProfile profile_;
  std::string embed_model_;
  std::string api_key_;
  std::string embed_key_;
};

}  // namespace carto::llm
