#pragma once

#include <array>
#include <cstdint>
#include <tuple>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "carto/error.hpp"
#include "carto/knowledge_tree.hpp"
#include "carto/text.hpp"

namespace carto::llm {

inline constexpr std::string_view kConceptPlaceholder = "{{concept}}";

struct PromptTemplate {
  std::string name;
  std::string country;   // ISO-3166 alpha-3, lower case
  std::string language;  // ISO-639-1
  std::string text;
  std::vector<std::string> tags;  // output tags the reply is parsed for
};

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

/// Substitutes the concept for the single placeholder; all other bytes are kept.
inline std::string render_prompt(const PromptTemplate& tmpl, std::string_view concept_text) {
  if (text::trim(concept_text).empty()) fail(ErrorCode::InvalidArgument, "concept is empty");
  const auto count = count_occurrences(tmpl.text, kConceptPlaceholder);
  if (count == 0) fail(ErrorCode::MissingPlaceholder, "template '" + tmpl.name + "' has no placeholder");
  if (count > 1) {
    fail(ErrorCode::InvalidArgument, "template '" + tmpl.name + "' has several placeholders");
  }
  const auto pos = tmpl.text.find(kConceptPlaceholder);
  std::string out;
  out.reserve(tmpl.text.size() + concept_text.size());
  out.append(tmpl.text, 0, pos);
  out.append(concept_text);
  out.append(tmpl.text, pos + kConceptPlaceholder.size());
  return out;
}

/// Inner texts of `<tag>...</tag>` spans in document order. A span whose close
/// marker is preceded by another open marker is treated as unclosed and skipped.
inline std::vector<std::string> parse_tagged_items(std::string_view reply, std::string_view tag,
                                                   std::size_t max_items) {
  std::vector<std::string> items;
  if (tag.empty() || max_items == 0) return items;
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  std::size_t pos = reply.find(open);
  while (pos != std::string_view::npos && items.size() < max_items) {
    const std::size_t body = pos + open.size();
    const std::size_t end = reply.find(close, body);
    if (end == std::string_view::npos) break;
    const std::size_t reopen = reply.find(open, body);
    if (reopen != std::string_view::npos && reopen < end) {
      pos = reopen;
      continue;
    }
    const auto inner = text::trim(reply.substr(body, end - body));
    if (!inner.empty()) items.emplace_back(inner);
    pos = reply.find(open, end + close.size());
  }
  return items;
}

struct LocalizedAnswer {
  Locality locality;
  std::string text;
  bool operator==(const LocalizedAnswer&) const = default;
};

/// Extracts `<universal>`, `<local>` and `<unique>` spans in document order.
inline std::vector<LocalizedAnswer> parse_locality_answers(std::string_view reply,
                                                           std::size_t max_items = SIZE_MAX) {
  static constexpr std::array<Locality, 3> kinds{Locality::Universal, Locality::Local,
                                                 Locality::Unique};
  auto next_open = [&](std::size_t from) -> std::pair<std::size_t, std::optional<Locality>> {
    std::size_t best = std::string_view::npos;
    std::optional<Locality> which;
    for (Locality l : kinds) {
      const std::string open = "<" + std::string(to_string(l)) + ">";
      const auto p = reply.find(open, from);
      if (p < best) {
        best = p;
        which = l;
      }
    }
    return {best, which};
  };

  std::vector<LocalizedAnswer> out;
  auto [pos, which] = next_open(0);
  while (pos != std::string_view::npos && out.size() < max_items) {
    const std::string name(to_string(*which));
    const std::size_t body = pos + name.size() + 2;
    const std::size_t end = reply.find("</" + name + ">", body);
    if (end == std::string_view::npos) {
      std::tie(pos, which) = next_open(body);
      continue;
    }
    auto [reopen, other] = next_open(body);
    if (reopen < end) {
      pos = reopen;
      which = other;
      continue;
    }
    const auto inner = text::trim(reply.substr(body, end - body));
    if (!inner.empty()) out.push_back({*which, std::string(inner)});
    std::tie(pos, which) = next_open(end + name.size() + 3);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Built-in templates

inline PromptTemplate nigerian_question_template() {
  return {
      "questions-nga", "nga", "en",
      "You are an anthropologist who is good at asking important questions about Nigerian "
      "culture. Given a description of an abstract cultural concept, please brainstorm 5 specific "
      "questions about this concept in Nigerian culture. Put each question in the XML tags: "
      "<question></question>. Each question should be written in a way that starts with the word "
      "'List'.\n"
      "cultural concept:Gifts\n"
      "examples: <question>List any customs or traditions related to the preparation and "
      "presentation of gifts in Nigerian culture.</question>\n"
      "<question>List the etiquette and expectations surrounding gift-giving and receiving in "
      "Nigerian culture.</question>\n"
      " <question>List the differences in gifting practices between various regions or social "
      "groups within Nigerian culture.</question>\n"
      "<question>List the occasions when gifts are traditionally exchanged in Nigerian "
      "culture.</question>\n"
      "<question>List any adaptations or changes in Nigerian gifting customs that have occurred "
      "over time due to social or technological advancements.</question>\n"
      "\n"
      " cultural concept:{{concept}}\n"
      " examples:",
      {"question"}};
}

inline PromptTemplate indonesian_question_template() {
  return {
      "questions-idn", "idn", "id",
      "Anda seorang antropolog yang pandai mengajukan pertanyaan penting tentang budaya "
      "Indonesia. Dengan deskripsi konsep budaya abstrak, silakan buat 5 pertanyaan spesifik "
      "tentang konsep ini dalam budaya Indonesia. Masukkan setiap pertanyaan dalam tag XML: "
      "<question></question>. Setiap pertanyaan harus ditulis dengan cara yang dimulai dengan "
      "kata 'Buat'. \n"
      "konsep budaya:Hadiah\n"
      "contoh: <question>Buat daftar kebiasaan atau tradisi yang terkait dengan persiapan dan "
      "pemberian hadiah dalam budaya Indonesia.</question>\n"
      " <question>Buat daftar etiket dan harapan seputar pemberian dan penerimaan hadiah dalam "
      "budaya Indonesia.</question>\n"
      " <question>Buat daftar perbedaan dalam praktik pemberian hadiah antara berbagai daerah "
      "atau kelompok sosial dalam budaya Indonesia.</question>\n"
      " <question>Buat daftar kesempatan saat hadiah secara tradisional dipertukarkan dalam "
      "budaya Indonesia.</question>\n"
      " <question>Buat daftar adaptasi atau perubahan dalam kebiasaan pemberian hadiah "
      "Indonesia yang telah terjadi dari waktu ke waktu karena kemajuan sosial atau "
      "teknologi.</question>\n"
      "\n"
      " konsep budaya:{{concept}}\n"
      " contoh:",
      {"question"}};
}

inline PromptTemplate nigerian_answer_template() {
  return {
      "answers-nga", "nga", "en",
      "You are an observant Nigerian person who is good at recalling diverse and accurate "
      "traditions, practices, and norms in your culture. Given a question, please brainstorm 5 "
      "more specific answers from Nigerian culture. Put each answer in one of the XML tags: "
      "<universal> if the answer applies to many cultures, or <local> if the answer applies only "
      "to a few related cultures, or <unique> if the answer applies only to Nigerian culture.\n"
      " cultural question: List some Nigerian wedding traditions and what they signify.\n"
      " examples:<unique>Alaga: A Nigerian wedding ceremony officiant whose job is to heckle the "
      "groom and his friends as entertainment for the wedding guests. This keeps guests engaged "
      "during the hour-long ceremony.</unique>\n"
      " <unique>Aso-Ebi: Nigerian couples choose what their guests wear by assigning a color for "
      "the bride’s family and a separate color for the groom’s family.</unique>\n"
      " <local>No Guest List: Nigerian weddings won’t have a guest list. The entire "
      "community is welcome and an abundance of food and drink is available in case you end up "
      "with your entire community in attendance.</local>\n"
      " <local>Gele: Nigerian brides wear a traditional, ornate headpiece called a Gele. The "
      "bridesmaids and families also follow suit and wear a Gele to honor the cultural "
      "traditions of the day.</local>\n"
      "\n"
      " cultural concept: {{concept}}\n"
      " examples:",
      {"universal", "local", "unique"}};
}

// No Indonesian answer exemplars exist; this reuses the answer instructions
// without the Nigeria-specific examples.
inline PromptTemplate indonesian_answer_template() {
  return {
      "answers-idn", "idn", "en",
      "You are an observant Indonesian person who is good at recalling diverse and accurate "
      "traditions, practices, and norms in your culture. Given a question, please brainstorm 5 "
      "more specific answers from Indonesian culture. Put each answer in one of the XML tags: "
      "<universal> if the answer applies to many cultures, or <local> if the answer applies only "
      "to a few related cultures, or <unique> if the answer applies only to Indonesian "
      "culture.\n"
      "\n"
      " cultural concept: {{concept}}\n"
      " examples:",
      {"universal", "local", "unique"}};
}

/// The question and answer templates used for one country.
struct TemplateSet {
  PromptTemplate questions;
  PromptTemplate answers;
};

class TemplateRegistry {
 public:
  TemplateRegistry() {
    add({nigerian_question_template(), nigerian_answer_template()});
    add({indonesian_question_template(), indonesian_answer_template()});
  }

  void add(TemplateSet set) {
    const std::string country = set.questions.country;
    sets_.insert_or_assign(country, std::move(set));
  }

  [[nodiscard]] const TemplateSet& for_country(const std::string& country) const {
    auto it = sets_.find(country);
    if (it == sets_.end()) fail(ErrorCode::InvalidArgument, "no templates for country '" + country + "'");
    return it->second;
  }

  [[nodiscard]] bool has(const std::string& country) const { return sets_.contains(country); }

 private:
  std::map<std::string, TemplateSet> sets_;
};

}  // namespace carto::llm
