#pragma once

#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carto/error.hpp"
#include "carto/llm/gateway.hpp"
#include "carto/llm/provider.hpp"

namespace carto::llm {

/// Serves responses recorded in an audit log, matched by request key. Repeated
/// identical requests are answered in the order they were recorded.
class ReplayProvider : public Provider {
 public:
  explicit ReplayProvider(const std::vector<AuditEntry>& entries, ProviderProfile profile = {"replay", "replay"})
      : profile_(std::move(profile)) {
    for (const auto& e : entries) {
      if (e.ok) responses_[e.key].push_back(e.response);
    }
  }

  static std::vector<AuditEntry> read_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot read audit log " + path);
    std::vector<AuditEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      entries.push_back(AuditEntry::from_json(nlohmann::json::parse(line)));
    }
    return entries;
  }

  const ProviderProfile& profile() const override { return profile_; }

  std::string complete(const ChatRequest& request) override {
    return next("complete", to_json(request)).get<std::string>();
  }

  double token_choice(const TokenChoiceQuery& query) override {
    return next("token_choice", to_json(query)).get<double>();
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    return next("embed", nlohmann::json{{"texts", texts}}).get<std::vector<std::vector<double>>>();
  }

 private:
  nlohmann::json next(std::string_view op, const nlohmann::json& request) {
    std::lock_guard lock(mutex_);
    const auto key = request_key(op, request);
    auto it = responses_.find(key);
    if (it == responses_.end() || it->second.empty()) {
      fail(ErrorCode::ProviderUnavailable, "no recorded response for request " + key);
    }
    auto response = it->second.front();
    // keep the last answer available for further identical requests
    if (it->second.size() > 1) it->second.pop_front();
    return response;
  }

  ProviderProfile profile_;
  std::mutex mutex_;
  std::map<std::string, std::deque<nlohmann::json>> responses_;
};

}  // namespace carto::llm
