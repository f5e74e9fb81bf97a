#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "carto/llm/gateway.hpp"
#include "carto/llm/prompt.hpp"
#include "carto/llm/provider.hpp"
#include "carto/llm/task_prompts.hpp"
#include "carto/text.hpp"

namespace carto::llm {

/// Returns the last user message verbatim.
class EchoProvider : public Provider {
 public:
  explicit EchoProvider(ProviderProfile profile = {"echo", "echo"}) : profile_(std::move(profile)) {}
  const ProviderProfile& profile() const override { return profile_; }
  std::string complete(const ChatRequest& request) override { return request.last_user_content(); }

 private:
  ProviderProfile profile_;
};

namespace mock_detail {

struct Theme {
  std::string_view label;
  std::array<std::string_view, 6> keywords;
};

inline constexpr std::array<Theme, 7> kThemes{{
    {"Community Engagement", {"community", "village", "neighbors", "gathering", "collective", "communal"}},
    {"Religious Practices", {"prayer", "mosque", "church", "religious", "blessing", "spiritual"}},
    {"Food and Cuisine", {"food", "dish", "meal", "rice", "cooking", "feast"}},
    {"Family Roles", {"family", "parents", "children", "mother", "father", "kin"}},
    {"Ceremonies and Celebrations", {"ceremony", "wedding", "festival", "celebration", "dance", "music"}},
    {"Regional Variation", {"region", "regional", "ethnic", "province", "state", "tribe"}},
    {"Etiquette and Respect", {"respect", "greeting", "polite", "etiquette", "elders", "bow"}},
}};

inline constexpr std::array<std::string_view, 12> kQuestionAngles{
    "the customs and traditions surrounding",
    "the etiquette and expectations related to",
    "the regional differences in practices of",
    "the occasions associated with",
    "recent changes in practices of",
    "the roles of elders and family in",
    "the religious meanings attached to",
    "the foods and objects used in",
    "the taboos and prohibitions around",
    "the community gatherings connected to",
    "the music and dance connected to",
    "the words and greetings used in",
};

inline constexpr std::array<std::string_view, 14> kAnswerIdeas{
    "elders are greeted first and with a bow as a sign of respect",
    "the whole community gathering shares a communal meal",
    "families prepare a special rice dish for the feast",
    "a religious blessing or prayer opens the ceremony",
    "each ethnic region keeps its own variation of the practice",
    "guests wear matching colors chosen by the family",
    "children receive small gifts from relatives",
    "drumming, music and dance accompany the celebration",
    "the mother's family hosts the first gathering",
    "gifts are refused once or twice before being accepted",
    "neighbors contribute food and labor collectively",
    "a spiritual leader is consulted to choose the date",
    "the father's kin negotiate the arrangements",
    "traditional attire is worn at the festival",
};

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

inline std::string after_last(std::string_view s, std::string_view marker) {
  const auto pos = s.rfind(marker);
  if (pos == std::string_view::npos) return {};
  auto rest = s.substr(pos + marker.size());
  const auto nl = rest.find('\n');
  return std::string(text::trim(rest.substr(0, nl)));
}

inline std::vector<std::string> words_lower(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || uc >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::vector<std::size_t> theme_hits(std::string_view s) {
  std::vector<std::size_t> hits(kThemes.size(), 0);
  for (const auto& w : words_lower(s)) {
    for (std::size_t t = 0; t < kThemes.size(); ++t) {
      for (auto k : kThemes[t].keywords) {
        if (w == k) ++hits[t];
      }
    }
  }
  return hits;
}

}  // namespace mock_detail

struct MockOptions {
  std::uint64_t seed = 0;
  std::size_t embedding_dim = 64;
  std::optional<double> fixed_confidence;
};

/// Deterministic offline stand-in for a chat model. It recognises every
/// prompt this library issues and produces well-formed, seed-dependent
/// replies; anything else is echoed back.
class MockProvider : public Provider {
 public:
  using Options = MockOptions;

  using Script = std::function<std::string(const ChatRequest&, std::size_t call_index)>;

  MockProvider() : MockProvider(ProviderProfile{}, Options{}) {}
  explicit MockProvider(ProviderProfile profile, Options options = {})
      : profile_(std::move(profile)), options_(options) {}
  explicit MockProvider(Options options) : MockProvider(ProviderProfile{}, options) {}

  const ProviderProfile& profile() const override { return profile_; }
  ProviderProfile& mutable_profile() { return profile_; }

  /// Overrides chat completions entirely.
  void set_script(Script script) {
    std::lock_guard lock(mutex_);
    script_ = std::move(script);
  }

  void set_token_choice(std::function<double(const TokenChoiceQuery&)> fn) {
    std::lock_guard lock(mutex_);
    token_choice_fn_ = std::move(fn);
  }

  /// The next `n` calls of any kind throw `code`.
  void fail_next(int n, ErrorCode code = ErrorCode::ProviderUnavailable) {
    std::lock_guard lock(mutex_);
    pending_failures_ = n;
    failure_code_ = code;
  }

  /// Answers the mock "knows" for a question; they lead its elicited lists.
  void set_knowledge(std::map<std::string, std::vector<std::string>> knowledge) {
    std::lock_guard lock(mutex_);
    knowledge_ = std::move(knowledge);
  }

  [[nodiscard]] std::size_t calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
  }

  std::string complete(const ChatRequest& request) override {
    std::size_t index = 0;
    Script script;
    {
      std::lock_guard lock(mutex_);
      maybe_fail();
      index = calls_++;
      script = script_;
    }
    if (script) return script(request, index);
    return respond(request, index);
  }

  double token_choice(const TokenChoiceQuery& query) override {
    std::function<double(const TokenChoiceQuery&)> fn;
    {
      std::lock_guard lock(mutex_);
      maybe_fail();
      ++calls_;
      fn = token_choice_fn_;
    }
    if (fn) return fn(query);
    if (options_.fixed_confidence) return *options_.fixed_confidence;
    const auto h = text::fnv1a64(query.prompt, mock_detail::mix(0x51ed270b, options_.seed));
    return static_cast<double>(h % 1001) / 1000.0;
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    {
      std::lock_guard lock(mutex_);
      maybe_fail();
      ++calls_;
    }
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
  }

 private:
  void maybe_fail() {
    if (pending_failures_ > 0) {
      --pending_failures_;
      fail(failure_code_, "injected failure");
    }
  }

  std::uint64_t hash(std::string_view s, std::size_t index) const {
    return mock_detail::mix(text::fnv1a64(s, mock_detail::mix(0xcbf29ce484222325ULL, options_.seed)),
                            index);
  }

  std::string respond(const ChatRequest& request, std::size_t index) const {
    const std::string& prompt = request.last_user_content();
    if (prompt.find("<question></question>") != std::string::npos) return questions(prompt, index);
    if (prompt.find("<universal>") != std::string::npos) return answers(prompt, index);
    if (prompt.find(kProbeQuestion) != std::string::npos) {
      return hash(prompt, index) % 10 < 6 ? "True" : "False";
    }
    if (prompt.find(prompts::kJudgeQuestion) != std::string::npos) return judge(prompt);
    if (prompt.find(prompts::kSummaryMarker) != std::string::npos) return summary(prompt);
    if (prompt.find(prompts::kSynthesisMarker) != std::string::npos) return synthesis(prompt);
    if (prompt.find(prompts::kClassifyMarker) != std::string::npos) return classification(prompt);
    if (prompt.find("Without explanation, list") != std::string::npos) return elicitation(request);
    return prompt;
  }

  std::string questions(std::string_view prompt, std::size_t index) const {
    const bool indonesian = prompt.find("konsep budaya:") != std::string_view::npos;
    std::string concept_text = mock_detail::after_last(prompt, indonesian ? "konsep budaya:" : "cultural concept:");
    if (concept_text.empty()) concept_text = "culture";
    if (concept_text.size() > 120) concept_text = concept_text.substr(0, 120);
    const auto h = hash(prompt, index);
    std::string out;
    for (std::size_t i = 0; i < 5; ++i) {
      const auto angle = mock_detail::kQuestionAngles[(h + i * 5) % mock_detail::kQuestionAngles.size()];
      out += "<question>";
      out += indonesian ? "Buat daftar " : "List ";
      out += angle;
      out += " " + concept_text + ".</question>\n";
    }
    return out;
  }

  std::string answers(std::string_view prompt, std::size_t index) const {
    static constexpr std::array<std::string_view, 3> tags{"universal", "local", "unique"};
    std::string concept_text = mock_detail::after_last(prompt, "cultural concept:");
    if (concept_text.size() > 80) concept_text = concept_text.substr(0, 80);
    const auto h = hash(prompt, index);
    std::string out;
    for (std::size_t i = 0; i < 5; ++i) {
      const auto tag = tags[(h / 7 + i) % tags.size()];
      const auto idea = mock_detail::kAnswerIdeas[(h + i * 3) % mock_detail::kAnswerIdeas.size()];
      out += "<" + std::string(tag) + ">" + std::string(idea) + " (" + concept_text + ")</" +
             std::string(tag) + ">\n";
    }
    return out;
  }

  std::string elicitation(const ChatRequest& request) const {
    std::string question;
    std::size_t turns = 0;
    for (const auto& m : request.messages) {
      if (m.role != "user") continue;
      if (turns++ == 0) {
        const auto pos = m.content.find("\n\nWithout explanation, list");
        question = m.content.substr(0, pos);
      }
    }
    int batch = 10;
    {
      const auto& last = request.last_user_content();
      const auto pos = last.find("list ");
      if (pos != std::string::npos) {
        try {
          batch = std::max(1, std::stoi(last.substr(pos + 5)));
        } catch (...) {
        }
      }
    }
    std::vector<std::string> pool;
    {
      std::lock_guard lock(mutex_);
      if (auto it = knowledge_.find(question); it != knowledge_.end()) pool = it->second;
    }
    const auto h = hash(question, 0);
    std::string out;
    const std::size_t start = (turns - 1) * static_cast<std::size_t>(batch);
    for (std::size_t i = start; i < start + static_cast<std::size_t>(batch); ++i) {
      std::string item;
      if (i < pool.size()) {
        item = pool[i];
      } else {
        const auto idea = mock_detail::kAnswerIdeas[(h + i) % mock_detail::kAnswerIdeas.size()];
        item = std::string(idea) + " (variant " + std::to_string(i + 1) + ")";
      }
      out += std::to_string(i - start + 1) + ". " + item + "\n";
    }
    return out;
  }

  static std::string judge(std::string_view prompt) {
    const auto a = prompt.find(prompts::kJudgeAnswersHeader);
    const auto g = prompt.rfind(prompts::kJudgeGoldHeader);
    if (a == std::string_view::npos || g == std::string_view::npos || g < a) return "No";
    const auto gold = text::to_lower_ascii(
        text::normalize_whitespace(prompt.substr(g + prompts::kJudgeGoldHeader.size())));
    const auto block = prompt.substr(a + prompts::kJudgeAnswersHeader.size(),
                                     g - a - prompts::kJudgeAnswersHeader.size());
    for (auto line : text::split_lines(block)) {
      line = text::trim(line);
      const auto dot = line.find(". ");
      if (dot == std::string_view::npos) continue;
      if (text::to_lower_ascii(text::normalize_whitespace(line.substr(dot + 2))) == gold) return "Yes";
    }
    return "No";
  }

  static std::string summary(std::string_view prompt) {
    const std::string question = mock_detail::after_last(prompt, "\nQuestion: ");
    const std::string answer = mock_detail::after_last(prompt, "\nAnswer: ");
    auto take = [](const std::string& s, std::size_t n) {
      auto w = text::split_words(s);
      if (w.size() > n) w.resize(n);
      return text::join(w, " ");
    };
    std::string out = "- " + take(answer, 20) + "\n";
    out += "- This concerns " + take(question, 16) + "\n";
    const auto hits = mock_detail::theme_hits(question + " " + answer);
    std::string themes;
    for (std::size_t t = 0; t < hits.size(); ++t) {
      if (hits[t] == 0) continue;
      if (!themes.empty()) themes += ", ";
      themes += text::to_lower_ascii(mock_detail::kThemes[t].label);
    }
    out += "- Themes: " + (themes.empty() ? std::string("everyday life") : themes) + "\n";
    return out;
  }

  static std::string synthesis(std::string_view prompt) {
    const auto pos = prompt.find("Bullets:");
    const auto hits = mock_detail::theme_hits(pos == std::string_view::npos ? prompt : prompt.substr(pos));
    std::vector<std::size_t> order(hits.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return hits[x] > hits[y]; });
    std::string out;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& theme = mock_detail::kThemes[order[i]];
      out += "<concept><label>" + std::string(theme.label) + "</label><prompt>Does the text discuss " +
             text::to_lower_ascii(theme.label) + "?</prompt></concept>\n";
    }
    return out;
  }

  static std::string classification(std::string_view prompt) {
    const std::string label = mock_detail::after_last(prompt, "Concept: ");
    const std::string item = mock_detail::after_last(prompt, "\nText: ");
    const auto hits = mock_detail::theme_hits(item);
    for (std::size_t t = 0; t < mock_detail::kThemes.size(); ++t) {
      if (mock_detail::kThemes[t].label == label) return hits[t] > 0 ? "Yes" : "No";
    }
    return text::fnv1a64(label + item) % 2 ? "Yes" : "No";
  }

  std::vector<double> embed_one(std::string_view s) const {
    const std::size_t dim = std::max<std::size_t>(options_.embedding_dim, mock_detail::kThemes.size() + 1);
    std::vector<double> v(dim, 0.0);
    const auto hits = mock_detail::theme_hits(s);
    for (std::size_t t = 0; t < hits.size(); ++t) v[t] += 3.0 * static_cast<double>(hits[t]);
    const std::size_t free_dims = dim - mock_detail::kThemes.size();
    for (const auto& w : mock_detail::words_lower(s)) {
      if (w.size() <= 3) continue;
      const auto h = text::fnv1a64(w, options_.seed + 1);
      v[mock_detail::kThemes.size() + h % free_dims] += (h >> 32) & 1 ? 1.0 : -1.0;
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    if (norm == 0) {
      v[text::fnv1a64(s) % dim] = 1.0;
      norm = 1.0;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  }

  ProviderProfile profile_;
  Options options_;
  mutable std::mutex mutex_;
  Script script_;
  std::function<double(const TokenChoiceQuery&)> token_choice_fn_;
  std::map<std::string, std::vector<std::string>> knowledge_;
  std::size_t calls_ = 0;
  int pending_failures_ = 0;
  ErrorCode failure_code_ = ErrorCode::ProviderUnavailable;
};

}  // namespace carto::llm
