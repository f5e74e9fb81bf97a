#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "carto/error.hpp"
#include "carto/knowledge_tree.hpp"

namespace carto::stats {

inline double mean(const std::vector<double>& xs) {
  if (xs.empty()) fail(ErrorCode::TooFewSamples, "mean of an empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Unbiased (n-1) variance.
inline double sample_variance(const std::vector<double>& xs) {
  if (xs.size() < 2) fail(ErrorCode::TooFewSamples, "variance needs two observations");
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

/// Two-sided p of a Student-t statistic.
inline double t_two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t))));
}

/// Unequal-variance t-test with Welch-Satterthwaite degrees of freedom. When
/// both samples have zero variance, p is 0 if the means differ and 1 otherwise.
inline TTest welch_t_test(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() < 2 || ys.size() < 2) {
    fail(ErrorCode::TooFewSamples, "t-test needs at least two observations per sample");
  }
  const double nx = static_cast<double>(xs.size());
  const double ny = static_cast<double>(ys.size());
  const double mx = mean(xs), my = mean(ys);
  const double vx = sample_variance(xs) / nx;
  const double vy = sample_variance(ys) / ny;
  const double se2 = vx + vy;
  TTest r;
  if (se2 == 0.0) {
    r.df = nx + ny - 2.0;
    if (mx == my) return r;
    r.t = mx > my ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = (mx - my) / std::sqrt(se2);
  r.df = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
  r.p = t_two_sided_p(r.t, r.df);
  return r;
}

/// Standardized mean difference using the (n-1)-weighted pooled deviation.
inline double cohens_d(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.empty() || ys.empty() || xs.size() + ys.size() < 3) {
    fail(ErrorCode::TooFewSamples, "effect size needs a pooled variance");
  }
  auto ss = [](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s;
  };
  const double pooled = (ss(xs) + ss(ys)) / static_cast<double>(xs.size() + ys.size() - 2);
  if (pooled <= 0.0) fail(ErrorCode::ZeroVariance, "pooled standard deviation is zero");
  return (mean(xs) - mean(ys)) / std::sqrt(pooled);
}

/// Chance-corrected agreement between two label sequences.
template <typename Label>
double cohens_kappa(const std::vector<Label>& a, const std::vector<Label>& b) {
  if (a.size() != b.size()) fail(ErrorCode::LengthMismatch, "label lists differ in length");
  if (a.empty()) fail(ErrorCode::TooFewSamples, "no labels");
  const double n = static_cast<double>(a.size());
  std::map<Label, double> ca, cb;
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
    if (a[i] == b[i]) agree += 1.0;
  }
  double pe = 0.0;
  for (const auto& [label, count] : ca) {
    auto it = cb.find(label);
    if (it != cb.end()) pe += (count / n) * (it->second / n);
  }
  if (pe >= 1.0) fail(ErrorCode::DegenerateMarginals, "chance agreement is 1");
  return (agree / n - pe) / (1.0 - pe);
}

inline std::string significance_stars(double p) {
  if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::InvalidArgument, "p outside [0,1]");
  if (p < 0.0001) return "****";
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "ns";
}

// ---------------------------------------------------------------------------
// Intraclass correlation

enum class IccVariant {
  OneWay,               // ICC(1,1)
  TwoWayAbsolute,       // ICC(2,1)
  TwoWayConsistency,    // ICC(3,1)
};

constexpr std::string_view to_string(IccVariant v) {
  switch (v) {
    case IccVariant::OneWay: return "icc1";
    case IccVariant::TwoWayAbsolute: return "icc2";
    case IccVariant::TwoWayConsistency: return "icc3";
  }
  return "?";
}

inline IccVariant parse_icc_variant(std::string_view s) {
  static constexpr IccVariant all[] = {IccVariant::OneWay, IccVariant::TwoWayAbsolute,
                                       IccVariant::TwoWayConsistency};
  return carto::detail::parse_enum(s, all, "ICC variant");
}

/// Subjects x raters grid; absent cells are nullopt.
struct ScoreMatrix {
  std::vector<std::string> subjects;
  std::vector<std::string> raters;
  std::vector<std::vector<std::optional<double>>> cells;
};

struct MeanSquares {
  double rows = 0.0;     // between subjects
  double cols = 0.0;     // between raters
  double error = 0.0;    // residual
  double within = 0.0;   // within subjects (one-way)
};

struct IccResult {
  double value = 0.0;
  IccVariant variant = IccVariant::TwoWayAbsolute;
  std::size_t subjects_used = 0;
  std::size_t raters_used = 0;
  std::vector<std::string> dropped_raters;
  std::vector<std::string> dropped_subjects;
  MeanSquares ms;
};

inline MeanSquares mean_squares(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size();
  const std::size_t k = x.front().size();
  double grand = 0.0;
  std::vector<double> row(n, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      grand += x[i][j];
      row[i] += x[i][j];
      col[j] += x[i][j];
    }
  }
  grand /= static_cast<double>(n * k);
  double ssr = 0.0, ssc = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = row[i] / static_cast<double>(k) - grand;
    ssr += d * d;
  }
  for (std::size_t j = 0; j < k; ++j) {
    const double d = col[j] / static_cast<double>(n) - grand;
    ssc += d * d;
  }
  for (const auto& r : x) {
    for (double v : r) sst += (v - grand) * (v - grand);
  }
  ssr *= static_cast<double>(k);
  ssc *= static_cast<double>(n);
  const double sse = std::max(0.0, sst - ssr - ssc);
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  MeanSquares ms;
  ms.rows = ssr / (dn - 1.0);
  ms.cols = ssc / (dk - 1.0);
  ms.error = sse / ((dn - 1.0) * (dk - 1.0));
  ms.within = (ssc + sse) / (dn * (dk - 1.0));
  return ms;
}

/// Shrout-Fleiss single-rater ICC. Raters are dropped greedily (most missing
/// cells first) and the step giving the largest complete block is kept.
inline IccResult icc(const ScoreMatrix& m, IccVariant variant = IccVariant::TwoWayAbsolute) {
  const std::size_t n_all = m.cells.size();
  const std::size_t k_all = n_all ? m.cells.front().size() : 0;
  for (const auto& r : m.cells) {
    if (r.size() != k_all) fail(ErrorCode::InvalidArgument, "ragged score matrix");
  }
  if (n_all < 2 || k_all < 2) fail(ErrorCode::InsufficientData, "need two subjects and two raters");

  std::vector<std::size_t> raters(k_all);
  for (std::size_t j = 0; j < k_all; ++j) raters[j] = j;
  auto complete_rows = [&](const std::vector<std::size_t>& rs) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n_all; ++i) {
      bool ok = true;
      for (std::size_t j : rs) ok = ok && m.cells[i][j].has_value();
      if (ok) rows.push_back(i);
    }
    return rows;
  };

  std::vector<std::size_t> best_raters = raters;
  std::size_t best_area = complete_rows(raters).size() * raters.size();
  std::vector<std::size_t> cur = raters;
  while (cur.size() > 2) {
    std::size_t worst = 0, worst_missing = 0;
    for (std::size_t idx = 0; idx < cur.size(); ++idx) {
      std::size_t missing = 0;
      for (std::size_t i = 0; i < n_all; ++i) missing += !m.cells[i][cur[idx]].has_value();
      if (missing > worst_missing) {
        worst_missing = missing;
        worst = idx;
      }
    }
    if (worst_missing == 0) break;
    cur.erase(cur.begin() + static_cast<std::ptrdiff_t>(worst));
    const std::size_t area = complete_rows(cur).size() * cur.size();
    if (area > best_area) {
      best_area = area;
      best_raters = cur;
    }
  }

  const auto rows = complete_rows(best_raters);
  if (rows.size() < 2) fail(ErrorCode::InsufficientData, "fewer than two complete subjects");

  IccResult res;
  res.variant = variant;
  res.subjects_used = rows.size();
  res.raters_used = best_raters.size();
  for (std::size_t j = 0; j < k_all; ++j) {
    if (!std::count(best_raters.begin(), best_raters.end(), j)) {
      res.dropped_raters.push_back(j < m.raters.size() ? m.raters[j] : std::to_string(j));
    }
  }
  for (std::size_t i = 0; i < n_all; ++i) {
    if (!std::count(rows.begin(), rows.end(), i)) {
      res.dropped_subjects.push_back(i < m.subjects.size() ? m.subjects[i] : std::to_string(i));
    }
  }

  std::vector<std::vector<double>> x;
  for (std::size_t i : rows) {
    std::vector<double> r;
    for (std::size_t j : best_raters) r.push_back(*m.cells[i][j]);
    x.push_back(std::move(r));
  }
  res.ms = mean_squares(x);
  if (res.ms.rows <= 0.0) fail(ErrorCode::InsufficientData, "no variance between subjects");
  const double k = static_cast<double>(best_raters.size());
  const double n = static_cast<double>(rows.size());
  const auto& ms = res.ms;
  switch (variant) {
    case IccVariant::OneWay:
      res.value = (ms.rows - ms.within) / (ms.rows + (k - 1.0) * ms.within);
      break;
    case IccVariant::TwoWayAbsolute:
      res.value = (ms.rows - ms.error) / (ms.rows + (k - 1.0) * ms.error + k * (ms.cols - ms.error) / n);
      break;
    case IccVariant::TwoWayConsistency:
      res.value = (ms.rows - ms.error) / (ms.rows + (k - 1.0) * ms.error);
      break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Likert scores, answer filtering and preference pairs

struct LikertRecord {
  NodeId answer;
  std::string annotator;
  int score = 0;
  bool operator==(const LikertRecord&) const = default;
};

struct SignificanceConfig {
  double alpha = 0.05;
  std::string test = "welch";
};

/// Score records currently stored on Active answers, in preorder.
inline std::vector<LikertRecord> likert_records(const KnowledgeTree& tree) {
  std::vector<LikertRecord> out;
  for (NodeId id : tree.active_nodes()) {
    const auto& n = tree.node(id);
    for (const auto& [who, score] : n.scores) out.push_back({id, who, score});
  }
  return out;
}

inline ScoreMatrix score_matrix(const std::vector<LikertRecord>& records) {
  std::set<NodeId> subjects;
  std::set<std::string> raters;
  for (const auto& r : records) {
    subjects.insert(r.answer);
    raters.insert(r.annotator);
  }
  ScoreMatrix m;
  for (NodeId s : subjects) m.subjects.push_back(to_string(s));
  m.raters.assign(raters.begin(), raters.end());
  std::map<NodeId, std::size_t> si;
  std::map<std::string, std::size_t> ri;
  for (NodeId s : subjects) si.emplace(s, si.size());
  for (const auto& r : m.raters) ri.emplace(r, ri.size());
  m.cells.assign(subjects.size(), std::vector<std::optional<double>>(raters.size()));
  for (const auto& r : records) {
    auto& cell = m.cells[si.at(r.answer)][ri.at(r.annotator)];
    if (cell) fail(ErrorCode::InvalidArgument, "duplicate score for answer " + to_string(r.answer) + " by " + r.annotator);
    cell = r.score;
  }
  return m;
}

struct AnswerScores {
  NodeId answer;
  std::vector<double> scores;
};

struct FilterResult {
  std::vector<NodeId> retained;
  std::vector<NodeId> dropped;
};

struct SignificantPair {
  std::size_t better = 0;  // indices into the input
  std::size_t worse = 0;
  TTest test;
};

/// All answer pairs of one question whose score samples differ at `alpha`.
inline std::vector<SignificantPair> significant_pairs(const std::vector<AnswerScores>& answers,
                                                      const SignificanceConfig& cfg = {}) {
  std::vector<SignificantPair> out;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    for (std::size_t j = i + 1; j < answers.size(); ++j) {
      if (answers[i].scores.size() < 2 || answers[j].scores.size() < 2) continue;
      const auto t = welch_t_test(answers[i].scores, answers[j].scores);
      if (!(t.p < cfg.alpha)) continue;
      const bool i_better = mean(answers[i].scores) > mean(answers[j].scores);
      out.push_back({i_better ? i : j, i_better ? j : i, t});
    }
  }
  return out;
}

/// Drops the lower-mean answer of every significantly different pair.
inline FilterResult filter_significant_answers(const std::vector<AnswerScores>& answers,
                                               const SignificanceConfig& cfg = {}) {
  std::vector<bool> dropped(answers.size(), false);
  for (const auto& pair : significant_pairs(answers, cfg)) dropped[pair.worse] = true;
  FilterResult r;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    (dropped[i] ? r.dropped : r.retained).push_back(answers[i].answer);
  }
  return r;
}

/// Human provenance: written by a human or substantively edited by one.
inline bool human_provenance(const KnowledgeTree& tree, NodeId id) {
  return tree.node(id).author == Author::Human || tree.human_edited(id);
}

/// Scores of the Active model-provenance answers of `question`, in child order.
inline std::vector<AnswerScores> model_answer_scores(const KnowledgeTree& tree, NodeId question,
                                                     const std::vector<LikertRecord>& records) {
  std::map<NodeId, std::vector<double>> by_answer;
  for (const auto& r : records) by_answer[r.answer].push_back(r.score);
  std::vector<AnswerScores> out;
  for (NodeId a : tree.active_children(question)) {
    if (tree.node(a).kind != NodeKind::Answer || human_provenance(tree, a)) continue;
    auto it = by_answer.find(a);
    out.push_back({a, it == by_answer.end() ? std::vector<double>{} : it->second});
  }
  return out;
}

/// Answers retained by the significance filter, over every Active question.
/// Only answers with at least one score are considered.
inline std::vector<NodeId> retained_model_answers(const KnowledgeTree& tree,
                                                  const std::vector<LikertRecord>& records,
                                                  const SignificanceConfig& cfg = {}) {
  std::vector<NodeId> out;
  for (NodeId q : tree.active_nodes()) {
    if (tree.node(q).kind != NodeKind::Question) continue;
    auto scored = model_answer_scores(tree, q, records);
    std::erase_if(scored, [](const AnswerScores& a) { return a.scores.empty(); });
    const auto kept = filter_significant_answers(scored, cfg).retained;
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

enum class PairReason { ScoreSignificant, HumanOverModel };

constexpr std::string_view to_string(PairReason r) {
  return r == PairReason::ScoreSignificant ? "score_significant" : "human_over_model";
}

struct PreferencePair {
  NodeId question;
  NodeId chosen;
  NodeId rejected;
  std::string prompt;
  std::string chosen_text;
  std::string rejected_text;
  Author chosen_provenance = Author::Model;
  Author rejected_provenance = Author::Model;
  PairReason reason = PairReason::ScoreSignificant;
  std::optional<double> p;  // score pairs only
};

/// Significant model-answer pairs (higher mean chosen) followed by every
/// human answer paired against every model answer of the same question.
inline std::vector<PreferencePair> derive_preference_pairs(const KnowledgeTree& tree,
                                                           const std::vector<LikertRecord>& records,
                                                           const SignificanceConfig& cfg = {}) {
  std::vector<PreferencePair> out;
  std::set<std::pair<NodeId, NodeId>> seen;
  auto emit = [&](NodeId q, NodeId chosen, NodeId rejected, PairReason reason, std::optional<double> p) {
    const auto& c = tree.node(chosen);
    const auto& r = tree.node(rejected);
    if (chosen == rejected || c.text == r.text) return;
    if (!seen.insert({chosen, rejected}).second) return;
    out.push_back({q, chosen, rejected, tree.node(q).text, c.text, r.text,
                   human_provenance(tree, chosen) ? Author::Human : Author::Model,
                   human_provenance(tree, rejected) ? Author::Human : Author::Model, reason, p});
  };
  for (NodeId q : tree.active_nodes()) {
    if (tree.node(q).kind != NodeKind::Question) continue;
    const auto model = model_answer_scores(tree, q, records);
    for (const auto& sp : significant_pairs(model, cfg)) {
      emit(q, model[sp.better].answer, model[sp.worse].answer, PairReason::ScoreSignificant, sp.test.p);
    }
    for (NodeId h : tree.active_children(q)) {
      if (tree.node(h).kind != NodeKind::Answer || !human_provenance(tree, h)) continue;
      for (const auto& m : model) emit(q, h, m.answer, PairReason::HumanOverModel, std::nullopt);
    }
  }
  return out;
}

}  // namespace carto::stats
