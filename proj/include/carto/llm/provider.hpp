#pragma once

#include <chrono>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carto/error.hpp"

namespace carto::llm {

struct Message {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
  bool operator==(const Message&) const = default;
};

struct DecodeOptions {
  double temperature = 0.7;
  int max_tokens = 1024;
  bool operator==(const DecodeOptions&) const = default;
};

inline constexpr DecodeOptions kGenerationDecode{0.7, 1024};
inline constexpr DecodeOptions kJudgeDecode{0.0, 16};

struct ChatRequest {
  std::vector<Message> messages;
  DecodeOptions decode;

  static ChatRequest single(std::string prompt, DecodeOptions decode = kGenerationDecode) {
    return {{{"user", std::move(prompt)}}, decode};
  }

  [[nodiscard]] const std::string& last_user_content() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
      if (it->role == "user") return it->content;
    }
    fail(ErrorCode::InvalidArgument, "request has no user message");
  }
};

/// Constrained two-way choice: probability that the next token is `positive`.
struct TokenChoiceQuery {
  std::string prompt;
  std::string positive = "True";
  std::string negative = "False";
};

struct ProviderProfile {
  std::string name = "mock";
  std::string model = "mock";
  std::string endpoint;
  bool supports_token_choice_probabilities = true;
  bool supports_web_search = false;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
};

/// Model access. Implementations throw Error{ProviderUnavailable|Timeout} for
/// transient failures; the gateway retries those.
class Provider {
 public:
  virtual ~Provider() = default;

  [[nodiscard]] virtual const ProviderProfile& profile() const = 0;

  virtual std::string complete(const ChatRequest& request) = 0;

  virtual double token_choice(const TokenChoiceQuery& /*query*/) {
    fail(ErrorCode::ProviderUnavailable, profile().name + " has no token-choice probabilities");
  }

  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& /*texts*/) {
    fail(ErrorCode::ProviderUnavailable, profile().name + " has no embedding endpoint");
  }
};

inline nlohmann::json to_json(const ChatRequest& r) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : r.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"messages", messages},
          {"temperature", r.decode.temperature},
          {"max_tokens", r.decode.max_tokens}};
}

inline nlohmann::json to_json(const TokenChoiceQuery& q) {
  return {{"prompt", q.prompt}, {"positive", q.positive}, {"negative", q.negative}};
}

}  // namespace carto::llm
