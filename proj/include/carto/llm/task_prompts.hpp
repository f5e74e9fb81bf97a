#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "carto/text.hpp"

// Prompt texts for the evaluation and concept-induction tasks. Kept together
// so the mock provider can recognise them.
namespace carto::llm::prompts {

inline constexpr std::string_view kContinuation =
    "We're looking different examples. Without explanation, list 10 more examples.";
inline constexpr std::string_view kJudgeQuestion =
    "Does any part of {model answers @K} contain the same information as the {gold answer}?";
inline constexpr std::string_view kJudgeAnswersHeader = "{model answers @K}:";
inline constexpr std::string_view kJudgeGoldHeader = "{gold answer}:";
inline constexpr std::string_view kSummaryMarker = "bullet points of at most 30 words each";
inline constexpr std::string_view kSynthesisMarker = "two key concept patterns";
inline constexpr std::string_view kClassifyMarker = "Answer Yes or No.";

inline std::string elicitation_first(std::string_view question, int batch) {
  return std::string(question) + "\n\nWithout explanation, list " + std::to_string(batch) +
         " examples.";
}

inline std::string elicitation_continue(int batch) {
  std::string s(kContinuation);
  if (batch != 10) text::replace_all(s, "list 10 more", "list " + std::to_string(batch) + " more");
  return s;
}

inline std::string judge(const std::vector<std::string>& model_answers, std::string_view gold) {
  std::string p(kJudgeQuestion);
  p += " Answer \"Yes\" or \"No\".\n\n";
  p += kJudgeAnswersHeader;
  p += "\n";
  for (std::size_t i = 0; i < model_answers.size(); ++i) {
    p += std::to_string(i + 1) + ". " + text::normalize_whitespace(model_answers[i]) + "\n";
  }
  p += "\n";
  p += kJudgeGoldHeader;
  p += " ";
  p += text::normalize_whitespace(gold);
  return p;
}

inline std::string summarize(std::string_view question, std::string_view answer) {
  std::string p =
      "Summarize the following question and answer pair with 3 bullet points of at most 30 words "
      "each. Start each bullet with \"- \" and write nothing else.\n\nQuestion: ";
  p += text::normalize_whitespace(question);
  p += "\nAnswer: ";
  p += text::normalize_whitespace(answer);
  return p;
}

inline std::string synthesize(const std::vector<std::string>& bullets) {
  std::string p =
      "The bullet points below summarize cultural knowledge that a language model failed to "
      "recall. Identify two key concept patterns shared by these bullets. For each concept give a "
      "short text label and a yes/no question that classifies whether a piece of text matches "
      "the concept. Format each concept as "
      "<concept><label>LABEL</label><prompt>QUESTION</prompt></concept>.\n\nBullets:\n";
  for (const auto& b : bullets) p += "- " + text::normalize_whitespace(b) + "\n";
  return p;
}

inline std::string classify(std::string_view label, std::string_view concept_prompt,
                            std::string_view item) {
  std::string p = "Concept: ";
  p += label;
  p += "\n";
  p += concept_prompt;
  p += "\n\nText: ";
  p += text::normalize_whitespace(item);
  p += "\n\n";
  p += kClassifyMarker;
  return p;
}

/// Yes/No verdict after trimming, case folding and dropping punctuation.
inline std::optional<bool> parse_yes_no(std::string_view reply) {
  auto words = text::split_words(text::to_lower_ascii(reply));
  if (words.empty()) return std::nullopt;
  std::string w = words.front();
  auto strip = [](char c) { return std::string_view(".,!?:;\"'*`()[]").find(c) != std::string_view::npos; };
  while (!w.empty() && strip(w.back())) w.pop_back();
  while (!w.empty() && strip(w.front())) w.erase(0, 1);
  if (w == "yes") return true;
  if (w == "no") return false;
  return std::nullopt;
}

}  // namespace carto::llm::prompts
