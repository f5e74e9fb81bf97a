#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "carto/error.hpp"
#include "carto/llm/gateway.hpp"
#include "carto/llm/task_prompts.hpp"
#include "carto/parallel.hpp"
#include "carto/stats.hpp"
#include "carto/text.hpp"

namespace carto::eval {

using nlohmann::json;

enum class Subset { Synthetic, Traditional, Cartography };

constexpr std::string_view to_string(Subset s) {
  switch (s) {
    case Subset::Synthetic: return "synthetic";
    case Subset::Traditional: return "traditional";
    case Subset::Cartography: return "cartography";
  }
  return "?";
}

inline Subset parse_subset(std::string_view s) {
  static constexpr Subset all[] = {Subset::Synthetic, Subset::Traditional, Subset::Cartography};
  return carto::detail::parse_enum(s, all, "subset");
}

struct GoldItem {
  std::string question;
  std::vector<std::string> answers;
  Subset subset = Subset::Cartography;
  std::string country;
  bool operator==(const GoldItem&) const = default;
};

inline json to_json(const GoldItem& g) {
  json j = json::object();
  j["question"] = g.question;
  j["answers"] = g.answers;
  j["subset"] = to_string(g.subset);
  j["country"] = g.country;
  return j;
}

inline GoldItem gold_from_json(const json& j) {
  GoldItem g;
  try {
    g.question = j.at("question").get<std::string>();
    g.answers = j.at("answers").get<std::vector<std::string>>();
    g.subset = parse_subset(j.at("subset").get<std::string>());
    g.country = j.at("country").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("bad gold item: ") + e.what());
  }
  if (text::trim(g.question).empty()) fail(ErrorCode::InvalidArgument, "gold item without question");
  if (g.answers.empty()) fail(ErrorCode::InvalidArgument, "gold item without answers");
  for (const auto& a : g.answers) {
    if (text::trim(a).empty()) fail(ErrorCode::InvalidArgument, "empty gold answer");
  }
  return g;
}

inline std::vector<json> read_jsonl(std::istream& in) {
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::InvalidArgument, "invalid JSON on line " + std::to_string(lineno));
    out.push_back(std::move(j));
  }
  return out;
}

inline std::vector<json> read_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  return read_jsonl(in);
}

inline std::vector<GoldItem> read_gold_bank(const std::string& path) {
  std::vector<GoldItem> out;
  for (const auto& j : read_jsonl_file(path)) out.push_back(gold_from_json(j));
  return out;
}

// ---------------------------------------------------------------------------
// Elicitation

struct Turn {
  std::string prompt;
  std::string response;
  std::size_t new_items = 0;
};

struct ElicitationTranscript {
  std::string provider;
  std::string question;
  std::vector<std::string> answers;
  std::vector<Turn> turns;
  bool stalled = false;
};

inline json to_json(const ElicitationTranscript& t) {
  json turns = json::array();
  for (const auto& turn : t.turns) {
    turns.push_back({{"prompt", turn.prompt}, {"response", turn.response}, {"new_items", turn.new_items}});
  }
  json j = json::object();
  j["provider"] = t.provider;
  j["question"] = t.question;
  j["answers"] = t.answers;
  j["stalled"] = t.stalled;
  j["turns"] = std::move(turns);
  return j;
}

inline ElicitationTranscript transcript_from_json(const json& j) {
  ElicitationTranscript t;
  t.provider = j.value("provider", "");
  t.question = j.at("question").get<std::string>();
  t.answers = j.at("answers").get<std::vector<std::string>>();
  t.stalled = j.value("stalled", false);
  for (const auto& turn : j.value("turns", json::array())) {
    t.turns.push_back({turn.at("prompt").get<std::string>(), turn.at("response").get<std::string>(),
                       turn.value("new_items", std::size_t{0})});
  }
  return t;
}

/// Lines of a list reply with enumeration markers ("1.", "2)", "-", "*", "•") removed.
inline std::vector<std::string> parse_list_items(std::string_view reply) {
  std::vector<std::string> out;
  for (auto line : text::split_lines(reply)) {
    line = text::trim(line);
    std::size_t i = 0;
    while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')' || line[i] == ':')) {
      line.remove_prefix(i + 1);
    } else if (line.starts_with("\xE2\x80\xA2")) {
      line.remove_prefix(3);
    } else if (line.starts_with("-") || line.starts_with("*")) {
      line.remove_prefix(1);
    }
    line = text::trim(line);
    if (!line.empty()) out.emplace_back(line);
  }
  return out;
}

inline std::string dedup_key(std::string_view s) {
  return text::to_lower_ascii(text::normalize_whitespace(s));
}

struct ElicitOptions {
  std::size_t k = 100;
  std::size_t batch = 10;
  std::size_t max_turns = 0;  // 0: three times the turns K needs
};

/// Asks for `batch` answers, then keeps the conversation going with the
/// continuation prompt until K unique answers are collected. Two consecutive
/// turns without new answers (or the turn cap) mark the transcript stalled.
inline ElicitationTranscript elicit_answers(llm::Gateway& gateway, const std::string& question,
                                            const ElicitOptions& opts = {}) {
  if (opts.batch == 0 || opts.k == 0 || opts.k % opts.batch != 0) {
    fail(ErrorCode::InvalidArgument, "K must be a positive multiple of the batch size");
  }
  if (text::trim(question).empty()) fail(ErrorCode::InvalidArgument, "question is empty");
  const std::size_t cap = opts.max_turns ? opts.max_turns : 3 * opts.k / opts.batch;
  ElicitationTranscript t;
  t.provider = gateway.profile().name;
  t.question = question;
  std::set<std::string> seen;
  llm::ChatRequest request;
  request.decode = llm::kGenerationDecode;
  std::size_t empty_streak = 0;
  const int batch = static_cast<int>(opts.batch);
  while (t.answers.size() < opts.k) {
    if (t.turns.size() >= cap) {
      t.stalled = true;
      break;
    }
    Turn turn;
    turn.prompt = t.turns.empty() ? llm::prompts::elicitation_first(question, batch)
                                  : llm::prompts::elicitation_continue(batch);
    request.messages.push_back({"user", turn.prompt});
    turn.response = gateway.complete(request);
    request.messages.push_back({"assistant", turn.response});
    for (auto& item : parse_list_items(turn.response)) {
      if (t.answers.size() >= opts.k) break;
      if (seen.insert(dedup_key(item)).second) {
        t.answers.push_back(std::move(item));
        ++turn.new_items;
      }
    }
    empty_streak = turn.new_items == 0 ? empty_streak + 1 : 0;
    t.turns.push_back(std::move(turn));
    if (empty_streak >= 2) {
      t.stalled = true;
      break;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Judging and recall

struct JudgeVerdict {
  std::string gold;
  std::optional<bool> covered;  // nullopt: unparseable
  std::string raw;
  std::string judge_model;
};

inline JudgeVerdict judge_covered(llm::Gateway& judge, const std::string& gold,
                                  const std::vector<std::string>& answers) {
  if (answers.empty()) fail(ErrorCode::InvalidArgument, "transcript is empty");
  JudgeVerdict v;
  v.gold = gold;
  v.judge_model = judge.profile().model;
  v.raw = judge.complete(llm::prompts::judge(answers, gold), llm::kJudgeDecode);
  v.covered = llm::prompts::parse_yes_no(v.raw);
  return v;
}

/// Like judge_covered but an unparseable reply is an error.
inline bool judge_covered_strict(llm::Gateway& judge, const std::string& gold,
                                 const std::vector<std::string>& answers) {
  const auto v = judge_covered(judge, gold, answers);
  if (!v.covered) fail(ErrorCode::UnparseableVerdict, "judge replied '" + v.raw + "'");
  return *v.covered;
}

struct ItemVerdict {
  std::size_t gold_index = 0;
  std::size_t answer_index = 0;
  std::string question;
  std::string gold;
  Subset subset = Subset::Cartography;
  std::string country;
  std::optional<bool> covered;
  std::string raw;
};

struct RecallCell {
  Subset subset = Subset::Cartography;
  std::string country;
  std::size_t covered = 0;
  std::size_t judged = 0;
  std::size_t unparseable = 0;
  double recall = 0.0;
};

struct RecallReport {
  std::string provider;
  std::string judge_model;
  std::size_t k = 0;
  std::vector<ItemVerdict> items;
  std::vector<RecallCell> cells;
  std::vector<std::string> stalled_questions;
};

/// Groups judged items by (subset, country); unparseable verdicts are counted
/// separately and left out of the denominator.
inline std::vector<RecallCell> aggregate_cells(const std::vector<ItemVerdict>& items) {
  std::map<std::pair<Subset, std::string>, RecallCell> cells;
  for (const auto& it : items) {
    auto& c = cells[{it.subset, it.country}];
    c.subset = it.subset;
    c.country = it.country;
    if (!it.covered) {
      ++c.unparseable;
      continue;
    }
    ++c.judged;
    if (*it.covered) ++c.covered;
  }
  std::vector<RecallCell> out;
  for (auto& [key, c] : cells) {
    c.recall = c.judged ? static_cast<double>(c.covered) / static_cast<double>(c.judged) : 0.0;
    out.push_back(c);
  }
  return out;
}

struct RecallOptions {
  std::size_t k = 100;
  std::size_t workers = 1;
};

/// Judges every gold answer against its question's transcript.
inline RecallReport recall_at_k(const std::vector<GoldItem>& gold,
                                const std::map<std::string, ElicitationTranscript>& transcripts,
                                llm::Gateway& judge, const RecallOptions& opts = {}) {
  RecallReport report;
  report.k = opts.k;
  report.judge_model = judge.profile().model;
  std::vector<std::tuple<std::size_t, std::size_t, const std::vector<std::string>*>> jobs;
  for (std::size_t gi = 0; gi < gold.size(); ++gi) {
    auto it = transcripts.find(gold[gi].question);
    if (it == transcripts.end()) {
      fail(ErrorCode::MissingTranscript, "no transcript for '" + gold[gi].question + "'");
    }
    if (report.provider.empty()) report.provider = it->second.provider;
    if (it->second.stalled) report.stalled_questions.push_back(gold[gi].question);
    for (std::size_t ai = 0; ai < gold[gi].answers.size(); ++ai) jobs.emplace_back(gi, ai, &it->second.answers);
  }
  report.items.resize(jobs.size());
  parallel_for(jobs.size(), opts.workers, [&](std::size_t j) {
    const auto [gi, ai, answers] = jobs[j];
    const auto& g = gold[gi];
    std::vector<std::string> top(answers->begin(),
                                 answers->begin() + static_cast<std::ptrdiff_t>(std::min(opts.k, answers->size())));
    ItemVerdict v;
    v.gold_index = gi;
    v.answer_index = ai;
    v.question = g.question;
    v.gold = g.answers[ai];
    v.subset = g.subset;
    v.country = g.country;
    if (top.empty()) {
      v.covered = false;
      v.raw = "";
    } else {
      auto verdict = judge_covered(judge, g.answers[ai], top);
      v.covered = verdict.covered;
      v.raw = std::move(verdict.raw);
    }
    report.items[j] = std::move(v);
  });
  report.cells = aggregate_cells(report.items);
  return report;
}

/// Elicits a transcript for every distinct gold question.
inline std::map<std::string, ElicitationTranscript> elicit_bank(llm::Gateway& gateway,
                                                                const std::vector<GoldItem>& gold,
                                                                const ElicitOptions& opts = {},
                                                                std::size_t workers = 1) {
  std::vector<std::string> questions;
  std::set<std::string> seen;
  for (const auto& g : gold) {
    if (seen.insert(g.question).second) questions.push_back(g.question);
  }
  std::vector<ElicitationTranscript> out(questions.size());
  parallel_for(questions.size(), workers, [&](std::size_t i) { out[i] = elicit_answers(gateway, questions[i], opts); });
  std::map<std::string, ElicitationTranscript> by_question;
  for (auto& t : out) by_question.emplace(t.question, std::move(t));
  return by_question;
}

inline json to_json(const RecallReport& r) {
  json items = json::array();
  for (const auto& it : r.items) {
    items.push_back({{"gold_index", it.gold_index},
                     {"answer_index", it.answer_index},
                     {"question", it.question},
                     {"gold", it.gold},
                     {"subset", to_string(it.subset)},
                     {"country", it.country},
                     {"covered", it.covered ? json(*it.covered) : json(nullptr)},
                     {"raw", it.raw}});
  }
  json cells = json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"subset", to_string(c.subset)},
                     {"country", c.country},
                     {"covered", c.covered},
                     {"judged", c.judged},
                     {"unparseable", c.unparseable},
                     {"recall", c.recall}});
  }
  json j = json::object();
  j["provider"] = r.provider;
  j["judge_model"] = r.judge_model;
  j["k"] = r.k;
  j["comparison_unit"] = "gold_answer";
  j["cells"] = std::move(cells);
  j["stalled_questions"] = r.stalled_questions;
  j["items"] = std::move(items);
  return j;
}

inline RecallReport report_from_json(const json& j) {
  RecallReport r;
  r.provider = j.value("provider", "");
  r.judge_model = j.value("judge_model", "");
  r.k = j.value("k", std::size_t{0});
  r.stalled_questions = j.value("stalled_questions", std::vector<std::string>{});
  for (const auto& it : j.at("items")) {
    ItemVerdict v;
    v.gold_index = it.at("gold_index").get<std::size_t>();
    v.answer_index = it.at("answer_index").get<std::size_t>();
    v.question = it.at("question").get<std::string>();
    v.gold = it.at("gold").get<std::string>();
    v.subset = parse_subset(it.at("subset").get<std::string>());
    v.country = it.at("country").get<std::string>();
    if (!it.at("covered").is_null()) v.covered = it.at("covered").get<bool>();
    v.raw = it.value("raw", "");
    r.items.push_back(std::move(v));
  }
  r.cells = aggregate_cells(r.items);
  return r;
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

inline std::string recall_table(const RecallReport& r) {
  std::ostringstream out;
  out << "provider: " << r.provider << "  judge: " << r.judge_model << "  K=" << r.k << "\n";
  out << pad("subset", 13) << pad("country", 9) << pad("R@K", 8) << pad("covered", 10) << "unparseable\n";
  for (const auto& c : r.cells) {
    out << pad(std::string(to_string(c.subset)), 13) << pad(c.country, 9) << pad(format_fixed(c.recall, 3), 8)
        << pad(std::to_string(c.covered) + "/" + std::to_string(c.judged), 10) << c.unparseable << "\n";
  }
  return out.str();
}

/// Not-covered items as QA pairs for concept induction.
inline std::vector<json> missed_items(const RecallReport& r) {
  std::vector<json> out;
  for (const auto& it : r.items) {
    if (it.covered && !*it.covered) {
      out.push_back({{"question", it.question},
                     {"answer", it.gold},
                     {"subset", to_string(it.subset)},
                     {"country", it.country}});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Judge validation

struct ValidationSample {
  std::vector<std::size_t> uniform;   // indices into the verdict list
  std::vector<std::size_t> minority;
  bool minority_label = true;
  bool insufficient_minority = false;

  [[nodiscard]] std::vector<std::size_t> all() const {
    auto v = uniform;
    v.insert(v.end(), minority.begin(), minority.end());
    return v;
  }
};

/// Uniform sample plus an oversample of the less frequent predicted label,
/// drawn from items not already chosen. Unparseable verdicts are skipped.
inline ValidationSample validation_sample(const std::vector<std::optional<bool>>& verdicts,
                                          std::size_t n_uniform = 50, std::size_t n_minority = 25,
                                          std::uint64_t seed = 0) {
  std::vector<std::size_t> pool;
  std::size_t yes = 0;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (!verdicts[i]) continue;
    pool.push_back(i);
    if (*verdicts[i]) ++yes;
  }
  if (pool.size() < n_uniform) {
    fail(ErrorCode::TooFewSamples, "verdict pool smaller than the uniform sample");
  }
  ValidationSample s;
  s.minority_label = yes * 2 <= pool.size();
  std::mt19937_64 rng(seed);
  auto shuffled = pool;
  seeded_shuffle(shuffled, rng);
  s.uniform.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_uniform));
  const std::set<std::size_t> taken(s.uniform.begin(), s.uniform.end());
  std::vector<std::size_t> rest;
  for (std::size_t i : pool) {
    if (*verdicts[i] == s.minority_label && !taken.contains(i)) rest.push_back(i);
  }
  seeded_shuffle(rest, rng);
  if (rest.size() < n_minority) {
    s.insufficient_minority = true;
    s.minority = rest;
  } else {
    s.minority.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_minority));
  }
  return s;
}

struct Agreement {
  std::size_t n = 0;
  std::size_t agreements = 0;
  double percent = 0.0;
  std::optional<double> kappa;  // nullopt when chance agreement is 1
};

inline Agreement agreement_report(const std::vector<bool>& human, const std::vector<bool>& model) {
  if (human.size() != model.size()) fail(ErrorCode::LengthMismatch, "label lists differ in length");
  if (human.empty()) fail(ErrorCode::TooFewSamples, "no labels");
  Agreement a;
  a.n = human.size();
  for (std::size_t i = 0; i < human.size(); ++i) a.agreements += human[i] == model[i];
  a.percent = 100.0 * static_cast<double>(a.agreements) / static_cast<double>(a.n);
  try {
    a.kappa = stats::cohens_kappa(human, model);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateMarginals) throw;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Estimation and comparison

/// Recall of a stronger model when it is only run on the items a base model missed.
inline double upper_bound_interpolation(double r_full, double r_failure) {
  for (double r : {r_full, r_failure}) {
    if (!(r >= 0.0 && r <= 1.0)) fail(ErrorCode::InvalidArgument, "recall outside [0,1]");
  }
  return r_full + (1.0 - r_full) * r_failure;
}

inline double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::floor(v * scale + 0.5) / scale;
}

struct ComparisonRow {
  std::string subset;   // "all" for the pooled row
  std::string country;
  std::size_t n = 0;
  double recall_a = 0.0;
  double recall_b = 0.0;
  double delta = 0.0;   // a - b
  std::optional<double> d;
  double p = 1.0;
  std::string stars = "ns";
};

/// Per-(subset, country) comparison of two runs over the same bank, testing
/// per gold answer 0/1 coverage with the Welch test.
inline std::vector<ComparisonRow> compare_runs(const RecallReport& a, const RecallReport& b) {
  if (a.items.size() != b.items.size()) fail(ErrorCode::BankMismatch, "reports cover different banks");
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    const auto& x = a.items[i];
    const auto& y = b.items[i];
    if (x.question != y.question || x.gold != y.gold || x.subset != y.subset || x.country != y.country) {
      fail(ErrorCode::BankMismatch, "item " + std::to_string(i) + " differs between reports");
    }
  }
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    if (!a.items[i].covered || !b.items[i].covered) continue;
    const double xa = *a.items[i].covered ? 1.0 : 0.0;
    const double xb = *b.items[i].covered ? 1.0 : 0.0;
    for (const auto& key : {std::pair<std::string, std::string>{std::string(to_string(a.items[i].subset)), a.items[i].country},
                            std::pair<std::string, std::string>{"all", "all"}}) {
      groups[key].first.push_back(xa);
      groups[key].second.push_back(xb);
    }
  }
  std::vector<ComparisonRow> rows;
  for (const auto& [key, samples] : groups) {
    const auto& [xs, ys] = samples;
    ComparisonRow row;
    row.subset = key.first;
    row.country = key.second;
    row.n = xs.size();
    row.recall_a = stats::mean(xs);
    row.recall_b = stats::mean(ys);
    row.delta = row.recall_a - row.recall_b;
    if (xs.size() >= 2) {
      row.p = stats::welch_t_test(xs, ys).p;
      row.stars = stats::significance_stars(row.p);
      try {
        row.d = stats::cohens_d(xs, ys);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ZeroVariance) throw;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const std::vector<ComparisonRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"subset", r.subset},
                   {"country", r.country},
                   {"n", r.n},
                   {"recall_a", r.recall_a},
                   {"recall_b", r.recall_b},
                   {"delta", r.delta},
                   {"d", r.d ? json(*r.d) : json(nullptr)},
                   {"p", r.p},
                   {"stars", r.stars}});
  }
  return out;
}

inline std::string comparison_table(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << pad("subset", 13) << pad("country", 9) << pad("n", 6) << pad("R@K a", 8) << pad("R@K b", 8)
      << pad("delta", 9) << pad("d", 8) << "sig\n";
  for (const auto& r : rows) {
    out << pad(r.subset, 13) << pad(r.country, 9) << pad(std::to_string(r.n), 6)
        << pad(format_fixed(r.recall_a, 3), 8) << pad(format_fixed(r.recall_b, 3), 8)
        << pad(format_fixed(r.delta, 3), 9) << pad(r.d ? format_fixed(*r.d, 2) : "-", 8) << r.stars << "\n";
  }
  return out.str();
}

}  // namespace carto::eval
