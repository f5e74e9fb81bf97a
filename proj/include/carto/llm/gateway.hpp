#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "carto/error.hpp"
#include "carto/llm/provider.hpp"
#include "carto/text.hpp"

namespace carto::llm {

struct AuditEntry {
  std::string key;      // FNV-1a of the canonical request
  std::string op;       // complete | token_choice | embed
  int attempt = 1;
  bool ok = false;
  nlohmann::json request;
  nlohmann::json response;  // null on failure
  std::string error;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"key", key},       {"op", op},           {"attempt", attempt}, {"ok", ok},
            {"request", request}, {"response", response}, {"error", error}};
  }

  static AuditEntry from_json(const nlohmann::json& j) {
    AuditEntry e;
    e.key = j.at("key").get<std::string>();
    e.op = j.at("op").get<std::string>();
    e.attempt = j.value("attempt", 1);
    e.ok = j.at("ok").get<bool>();
    e.request = j.at("request");
    e.response = j.value("response", nlohmann::json());
    e.error = j.value("error", "");
    return e;
  }
};

inline std::string request_key(std::string_view op, const nlohmann::json& request) {
  return text::to_hex(text::fnv1a64(std::string(op) + "\n" + request.dump()));
}

/// Append-only record of every provider attempt. Optionally mirrored to a
/// JSON-lines file. Entries carry no wall-clock data so identical request
/// sequences produce identical logs.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(const std::string& path) : path_(path) {}

  void append(AuditEntry entry) {
    std::lock_guard lock(mutex_);
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      if (!out) fail(ErrorCode::IoError, "cannot append to audit log " + path_);
      out << entry.to_json().dump() << '\n';
    }
    entries_.push_back(std::move(entry));
  }

  [[nodiscard]] std::vector<AuditEntry> entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
  }

  [[nodiscard]] std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

  [[nodiscard]] std::string dump_jsonl() const {
    std::lock_guard lock(mutex_);
    std::string out;
    for (const auto& e : entries_) out += e.to_json().dump() + "\n";
    return out;
  }

 private:
  mutable std::mutex mutex_;
  std::string path_;
  std::vector<AuditEntry> entries_;
};

struct GatewayOptions {
  std::ptrdiff_t max_in_flight = 8;
  std::chrono::milliseconds backoff_base{200};
  std::chrono::milliseconds backoff_cap{5000};
  std::string audit_path;  // empty: in-memory only
};

/// Wraps a provider with bounded concurrency, retries with exponential
/// backoff, and the audit log.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Provider> provider, GatewayOptions options = {})
      : provider_(std::move(provider)),
        options_(options),
        audit_(options.audit_path.empty() ? AuditLog() : AuditLog(options.audit_path)),
        slots_(std::clamp<std::ptrdiff_t>(options.max_in_flight, 1, kMaxSlots)) {
    if (!provider_) fail(ErrorCode::InvalidArgument, "gateway needs a provider");
  }

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  [[nodiscard]] const ProviderProfile& profile() const { return provider_->profile(); }
  [[nodiscard]] const AuditLog& audit() const { return audit_; }
  [[nodiscard]] Provider& provider() { return *provider_; }

  std::string complete(const ChatRequest& request) {
    if (request.messages.empty() || text::trim(request.messages.back().content).empty()) {
      fail(ErrorCode::InvalidArgument, "prompt is empty");
    }
    auto response = call("complete", to_json(request),
                         [&] { return nlohmann::json(provider_->complete(request)); });
    return response.get<std::string>();
  }

  std::string complete(std::string prompt, DecodeOptions decode = kGenerationDecode) {
    return complete(ChatRequest::single(std::move(prompt), decode));
  }

  double token_choice(const TokenChoiceQuery& query) {
    if (query.positive == query.negative) {
      fail(ErrorCode::InvalidArgument, "token choice options must differ");
    }
    auto response =
        call("token_choice", to_json(query), [&] { return nlohmann::json(provider_->token_choice(query)); });
    if (!response.is_number()) fail(ErrorCode::MalformedProbeResponse, "non-numeric probability");
    const double p = response.get<double>();
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      fail(ErrorCode::MalformedProbeResponse, "probability outside [0,1]");
    }
    return p;
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) {
    auto response = call("embed", nlohmann::json{{"texts", texts}},
                         [&] { return nlohmann::json(provider_->embed(texts)); });
    return response.get<std::vector<std::vector<double>>>();
  }

 private:
  static constexpr std::ptrdiff_t kMaxSlots = 1024;

  template <typename Fn>
  nlohmann::json call(std::string_view op, const nlohmann::json& request, Fn&& fn) {
    const std::string key = request_key(op, request);
    const int attempts = std::max(0, profile().max_retries) + 1;
    ErrorCode last = ErrorCode::ProviderUnavailable;
    std::string last_message;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      AuditEntry entry{key, std::string(op), attempt, false, request, nullptr, ""};
      try {
        nlohmann::json response;
        {
          slots_.acquire();
          struct Release {
            std::counting_semaphore<kMaxSlots>& s;
            ~Release() { s.release(); }
          } release{slots_};
          response = fn();
        }
        entry.ok = true;
        entry.response = response;
        audit_.append(std::move(entry));
        return response;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ProviderUnavailable && e.code() != ErrorCode::Timeout) {
          entry.error = e.what();
          audit_.append(std::move(entry));
          throw;
        }
        last = e.code();
        last_message = e.what();
        entry.error = e.what();
        audit_.append(std::move(entry));
      }
      if (attempt < attempts) backoff(attempt);
    }
    fail(last, "gave up after " + std::to_string(attempts) + " attempts: " + last_message);
  }

  void backoff(int attempt) const {
    if (options_.backoff_base.count() <= 0) return;
    auto delay = options_.backoff_base * (1LL << std::min(attempt - 1, 16));
    std::this_thread::sleep_for(std::min<std::chrono::milliseconds>(delay, options_.backoff_cap));
  }

  std::shared_ptr<Provider> provider_;
  GatewayOptions options_;
  AuditLog audit_;
  std::counting_semaphore<kMaxSlots> slots_;
};

// ---------------------------------------------------------------------------
// Confidence probing

inline constexpr std::string_view kProbeQuestion = "Does this answer the question correctly?";
inline constexpr double kUncertaintyThreshold = 0.4;
inline constexpr int kFallbackSamples = 10;

inline std::string probe_prompt(std::string_view question, std::string_view answer) {
  std::string p;
  p += "Question: ";
  p += question;
  p += "\nAnswer: ";
  p += answer;
  p += "\n";
  p += kProbeQuestion;
  p += " Respond with True or False.";
  return p;
}

/// Maps a sampled reply onto the two options; nullopt when it is neither.
inline std::optional<bool> parse_choice(std::string_view reply, std::string_view positive,
                                        std::string_view negative) {
  std::string s = text::to_lower_ascii(text::trim(reply));
  while (!s.empty() && std::string_view(".,!:;\"'").find(s.back()) != std::string_view::npos) s.pop_back();
  while (!s.empty() && std::string_view("\"'").find(s.front()) != std::string_view::npos) s.erase(0, 1);
  if (s == text::to_lower_ascii(positive)) return true;
  if (s == text::to_lower_ascii(negative)) return false;
  return std::nullopt;
}

/// Probability that the model judges `answer` correct for `question`. Uses
/// constrained True/False probabilities when the provider exposes them and
/// otherwise the fraction of `samples` single-token draws at temperature 1.
inline double answer_confidence(Gateway& gateway, std::string_view question,
                                std::string_view answer, int samples = kFallbackSamples) {
  TokenChoiceQuery query{probe_prompt(question, answer), "True", "False"};
  if (gateway.profile().supports_token_choice_probabilities) {
    return gateway.token_choice(query);
  }
  if (samples <= 0) fail(ErrorCode::InvalidArgument, "sample count must be positive");
  int positive = 0;
  for (int i = 0; i < samples; ++i) {
    const auto reply = gateway.complete(query.prompt, DecodeOptions{1.0, 1});
    const auto choice = parse_choice(reply, query.positive, query.negative);
    if (!choice) fail(ErrorCode::MalformedProbeResponse, "probe reply '" + reply + "'");
    if (*choice) ++positive;
  }
  return static_cast<double>(positive) / static_cast<double>(samples);
}

inline bool is_uncertain(double confidence, double threshold = kUncertaintyThreshold) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "confidence outside [0,1]");
  }
  return confidence <= threshold;
}

}  // namespace carto::llm
