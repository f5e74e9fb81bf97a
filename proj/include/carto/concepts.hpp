#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carto/error.hpp"
#include "carto/llm/gateway.hpp"
#include "carto/llm/prompt.hpp"
#include "carto/llm/task_prompts.hpp"
#include "carto/parallel.hpp"
#include "carto/text.hpp"

namespace carto::concepts {

using nlohmann::json;
using Vector = std::vector<double>;

inline constexpr std::size_t kMaxBullets = 3;
inline constexpr std::size_t kMaxBulletWords = 30;

struct QaPair {
  std::string question;
  std::string answer;
};

struct BulletSummary {
  std::size_t source = 0;
  std::vector<std::string> bullets;
  bool truncated = false;
};

/// Bullet lines of a summary reply, capped at 3 bullets of 30 whitespace words.
inline BulletSummary parse_bullets(std::string_view reply) {
  BulletSummary s;
  for (auto line : text::split_lines(reply)) {
    line = text::trim(line);
    if (line.starts_with("\xE2\x80\xA2")) {
      line.remove_prefix(3);
    } else if (line.starts_with("-") || line.starts_with("*")) {
      line.remove_prefix(1);
    } else {
      std::size_t i = 0;
      while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
      if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) line.remove_prefix(i + 1);
    }
    auto words = text::split_words(line);
    if (words.empty()) continue;
    if (s.bullets.size() == kMaxBullets) {
      s.truncated = true;
      break;
    }
    if (words.size() > kMaxBulletWords) {
      words.resize(kMaxBulletWords);
      s.truncated = true;
    }
    s.bullets.push_back(text::join(words, " "));
  }
  return s;
}

inline BulletSummary summarize_missed(llm::Gateway& gateway, const QaPair& qa, std::size_t source = 0) {
  auto s = parse_bullets(gateway.complete(llm::prompts::summarize(qa.question, qa.answer), llm::kJudgeDecode));
  if (s.bullets.empty()) fail(ErrorCode::EmptySummary, "no bullets for '" + qa.question + "'");
  s.source = source;
  return s;
}

// ---------------------------------------------------------------------------
// Embeddings

inline Vector l2_normalize(Vector v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) fail(ErrorCode::InvalidArgument, "cannot normalize a zero vector");
  for (double& x : v) x /= norm;
  return v;
}

inline double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_distance(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Unit-normalized embeddings keyed by text hash.
class EmbeddingCache {
 public:
  std::vector<Vector> embed(llm::Gateway& gateway, const std::vector<std::string>& texts) {
    if (texts.empty()) fail(ErrorCode::InvalidArgument, "nothing to embed");
    std::vector<std::string> missing;
    {
      std::lock_guard lock(mutex_);
      std::set<std::string> queued;
      for (const auto& t : texts) {
        const auto key = text::to_hex(text::fnv1a64(t));
        if (!cache_.contains(key) && queued.insert(key).second) missing.push_back(t);
      }
    }
    if (!missing.empty()) {
      auto vectors = gateway.embed(missing);
      if (vectors.size() != missing.size()) {
        fail(ErrorCode::DimensionMismatch, "provider returned " + std::to_string(vectors.size()) +
                                               " embeddings for " + std::to_string(missing.size()) + " texts");
      }
      std::lock_guard lock(mutex_);
      for (std::size_t i = 0; i < missing.size(); ++i) {
        auto v = l2_normalize(std::move(vectors[i]));
        if (dim_ == 0) dim_ = v.size();
        if (v.size() != dim_) {
          fail(ErrorCode::DimensionMismatch, "embedding of size " + std::to_string(v.size()) +
                                                 ", expected " + std::to_string(dim_));
        }
        cache_.emplace(text::to_hex(text::fnv1a64(missing[i])), std::move(v));
      }
    }
    std::lock_guard lock(mutex_);
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(cache_.at(text::to_hex(text::fnv1a64(t))));
    return out;
  }

  [[nodiscard]] std::size_t size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, Vector> cache_;
  std::size_t dim_ = 0;
};

inline std::vector<Vector> embed(llm::Gateway& gateway, const std::vector<std::string>& texts) {
  EmbeddingCache cache;
  return cache.embed(gateway, texts);
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansOptions {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

struct KMeansResult {
  std::vector<std::size_t> assignments;
  std::vector<Vector> centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after every assignment step
  std::size_t iterations = 0;
};

namespace detail {

inline std::pair<std::vector<std::size_t>, double> assign(const std::vector<Vector>& xs,
                                                          const std::vector<Vector>& centroids) {
  std::vector<std::size_t> labels(xs.size());
  double inertia = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double d = squared_distance(xs[i], centroids[c]);
      if (d < best) {
        best = d;
        labels[i] = c;
      }
    }
    inertia += best;
  }
  return {labels, inertia};
}

inline std::vector<Vector> plus_plus_init(const std::vector<Vector>& xs, std::size_t k, std::mt19937_64& rng) {
  std::vector<Vector> centers;
  std::vector<bool> chosen(xs.size(), false);
  const auto first = uniform_index(rng, xs.size());
  centers.push_back(xs[first]);
  chosen[first] = true;
  std::vector<double> d2(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) d2[i] = squared_distance(xs[i], centers[0]);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) total += chosen[i] ? 0.0 : d2[i];
    std::size_t pick = xs.size();
    if (total > 0.0) {
      const double r = uniform_unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (chosen[i] || d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > r) break;
      }
    } else {
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!chosen[i]) free.push_back(i);
      }
      pick = free[uniform_index(rng, free.size())];
    }
    chosen[pick] = true;
    centers.push_back(xs[pick]);
    for (std::size_t i = 0; i < xs.size(); ++i) d2[i] = std::min(d2[i], squared_distance(xs[i], centers.back()));
  }
  return centers;
}

}  // namespace detail

/// Seeded k-means++ followed by Lloyd iterations. Empty clusters take the
/// point farthest from its current centroid.
inline KMeansResult kmeans(const std::vector<Vector>& xs, const KMeansOptions& opts = {}) {
  if (opts.k == 0 || xs.size() < opts.k) {
    fail(ErrorCode::TooFewPoints, std::to_string(xs.size()) + " points for k=" + std::to_string(opts.k));
  }
  const std::size_t dim = xs.front().size();
  for (const auto& x : xs) {
    if (x.size() != dim) fail(ErrorCode::DimensionMismatch, "vectors differ in dimension");
  }
  std::mt19937_64 rng(opts.seed);
  KMeansResult r;
  r.centroids = detail::plus_plus_init(xs, opts.k, rng);
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    auto [labels, inertia] = detail::assign(xs, r.centroids);
    r.inertia_history.push_back(inertia);
    ++r.iterations;

    std::vector<Vector> next(opts.k, Vector(dim, 0.0));
    std::vector<std::size_t> counts(opts.k, 0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ++counts[labels[i]];
      for (std::size_t d = 0; d < dim; ++d) next[labels[i]][d] += xs[i][d];
    }
    std::set<std::size_t> reseeded;
    for (std::size_t c = 0; c < opts.k; ++c) {
      if (counts[c] > 0) {
        for (double& v : next[c]) v /= static_cast<double>(counts[c]);
        continue;
      }
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (reseeded.contains(i)) continue;
        const double d = squared_distance(xs[i], r.centroids[labels[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      reseeded.insert(far);
      next[c] = xs[far];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < opts.k; ++c) shift = std::max(shift, std::sqrt(squared_distance(next[c], r.centroids[c])));
    r.centroids = std::move(next);
    if (shift < opts.tol) break;
  }
  auto [labels, inertia] = detail::assign(xs, r.centroids);
  r.assignments = std::move(labels);
  r.inertia = inertia;
  r.inertia_history.push_back(inertia);
  return r;
}

// ---------------------------------------------------------------------------
// Synthesis and classification

struct ConceptPattern {
  std::string label;
  std::string prompt;
  bool operator==(const ConceptPattern&) const = default;
};

inline std::vector<ConceptPattern> parse_concepts(std::string_view reply) {
  std::vector<ConceptPattern> out;
  for (const auto& block : llm::parse_tagged_items(reply, "concept", SIZE_MAX)) {
    const auto label = llm::parse_tagged_items(block, "label", 1);
    const auto prompt = llm::parse_tagged_items(block, "prompt", 1);
    if (label.empty() || prompt.empty()) continue;
    out.push_back({label.front(), prompt.front()});
  }
  return out;
}

/// Exactly two concept patterns for a cluster's bullets; one retry on a bad reply.
inline std::vector<ConceptPattern> synthesize_concepts(llm::Gateway& gateway, const std::vector<std::string>& bullets) {
  if (bullets.empty()) fail(ErrorCode::InvalidArgument, "cluster has no bullets");
  const auto prompt = llm::prompts::synthesize(bullets);
  std::string last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    last = gateway.complete(prompt, llm::kJudgeDecode);
    auto concepts = parse_concepts(last);
    if (concepts.size() >= 2) {
      concepts.resize(2);
      return concepts;
    }
  }
  fail(ErrorCode::SynthesisParseError, "could not parse two concepts from '" + last.substr(0, 200) + "'");
}

struct ConceptPrevalence {
  std::string label;
  std::size_t matched = 0;
  std::size_t classified = 0;
  std::size_t unparseable = 0;
  double proportion = 0.0;
};

struct Classification {
  std::vector<std::optional<bool>> matches;
  ConceptPrevalence prevalence;
};

inline Classification classify_by_concept(llm::Gateway& gateway, const ConceptPattern& concept_pattern,
                                          const std::vector<std::string>& items, std::size_t workers = 1) {
  if (items.empty()) fail(ErrorCode::InvalidArgument, "no items to classify");
  Classification c;
  c.matches.resize(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    const auto reply =
        gateway.complete(llm::prompts::classify(concept_pattern.label, concept_pattern.prompt, items[i]), llm::kJudgeDecode);
    c.matches[i] = llm::prompts::parse_yes_no(reply);
  });
  c.prevalence.label = concept_pattern.label;
  for (const auto& m : c.matches) {
    if (!m) {
      ++c.prevalence.unparseable;
      continue;
    }
    ++c.prevalence.classified;
    if (*m) ++c.prevalence.matched;
  }
  if (c.prevalence.classified) {
    c.prevalence.proportion =
        static_cast<double>(c.prevalence.matched) / static_cast<double>(c.prevalence.classified);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Pipelines

struct InductionOptions {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct ConceptReport {
  std::vector<BulletSummary> summaries;
  KMeansResult clustering;
  std::vector<std::vector<std::size_t>> cluster_items;  // QA indices per cluster
  std::vector<ConceptPattern> concepts;
  std::vector<ConceptPrevalence> prevalence;  // sorted by proportion, then label
};

inline std::string qa_text(const QaPair& qa) { return "Question: " + qa.question + "\nAnswer: " + qa.answer; }

/// Summarize, embed bullets, cluster, synthesize two concepts per cluster and
/// measure how much of the missed knowledge each concept covers.
inline ConceptReport induce_concepts(llm::Gateway& gateway, const std::vector<QaPair>& missed,
                                     const InductionOptions& opts = {}, EmbeddingCache* cache = nullptr) {
  if (missed.empty()) fail(ErrorCode::InvalidArgument, "no missed items");
  ConceptReport report;
  report.summaries.resize(missed.size());
  parallel_for(missed.size(), opts.workers,
               [&](std::size_t i) { report.summaries[i] = summarize_missed(gateway, missed[i], i); });

  std::vector<std::string> bullets;
  std::vector<std::size_t> owner;
  for (const auto& s : report.summaries) {
    for (const auto& b : s.bullets) {
      bullets.push_back(b);
      owner.push_back(s.source);
    }
  }
  EmbeddingCache local;
  const auto vectors = (cache ? *cache : local).embed(gateway, bullets);
  report.clustering = kmeans(vectors, {opts.k, opts.seed});

  report.cluster_items.assign(opts.k, {});
  std::vector<std::vector<std::string>> cluster_bullets(opts.k);
  for (std::size_t i = 0; i < bullets.size(); ++i) {
    const auto c = report.clustering.assignments[i];
    cluster_bullets[c].push_back(bullets[i]);
    auto& items = report.cluster_items[c];
    if (std::find(items.begin(), items.end(), owner[i]) == items.end()) items.push_back(owner[i]);
  }

  std::vector<std::vector<ConceptPattern>> per_cluster(opts.k);
  parallel_for(opts.k, opts.workers,
               [&](std::size_t c) { per_cluster[c] = synthesize_concepts(gateway, cluster_bullets[c]); });
  std::set<std::string> labels;
  for (const auto& cs : per_cluster) {
    for (const auto& c : cs) {
      if (labels.insert(c.label).second) report.concepts.push_back(c);
    }
  }

  std::vector<std::string> items;
  for (const auto& qa : missed) items.push_back(qa_text(qa));
  for (const auto& c : report.concepts) report.prevalence.push_back(classify_by_concept(gateway, c, items, opts.workers).prevalence);
  std::stable_sort(report.prevalence.begin(), report.prevalence.end(), [](const auto& a, const auto& b) {
    if (a.proportion != b.proportion) return a.proportion > b.proportion;
    return a.label < b.label;
  });
  return report;
}

inline json to_json(const ConceptReport& r) {
  json prevalence = json::array();
  for (const auto& p : r.prevalence) {
    prevalence.push_back({{"label", p.label},
                          {"proportion", p.proportion},
                          {"matched", p.matched},
                          {"classified", p.classified},
                          {"unparseable", p.unparseable}});
  }
  json concepts = json::array();
  for (const auto& c : r.concepts) concepts.push_back({{"label", c.label}, {"prompt", c.prompt}});
  json summaries = json::array();
  for (const auto& s : r.summaries) {
    summaries.push_back({{"source", s.source}, {"bullets", s.bullets}, {"truncated", s.truncated}});
  }
  json j = json::object();
  j["prevalence"] = std::move(prevalence);
  j["concepts"] = std::move(concepts);
  j["clusters"] = r.cluster_items;
  j["inertia"] = r.clustering.inertia;
  j["summaries"] = std::move(summaries);
  return j;
}

inline std::string prevalence_table(const ConceptReport& r) {
  std::size_t width = 7;
  for (const auto& p : r.prevalence) width = std::max(width, p.label.size());
  std::ostringstream out;
  out << "Concept" << std::string(width - 7 + 2, ' ') << "Prevalence\n";
  for (const auto& p : r.prevalence) {
    char pct[32];
    std::snprintf(pct, sizeof pct, "%.1f%%", 100.0 * p.proportion);
    out << p.label << std::string(width - p.label.size() + 2, ' ') << pct << "\n";
  }
  return out.str();
}

/// Candidate seed topics from answers pooled across cultures: one label per cluster.
inline std::vector<std::string> derive_seed_topics(llm::Gateway& gateway,
                                                   const std::map<std::string, std::vector<std::string>>& corpora,
                                                   std::size_t k, std::uint64_t seed = 0, EmbeddingCache* cache = nullptr) {
  if (corpora.size() < 2) fail(ErrorCode::InvalidArgument, "need answers from at least two cultures");
  std::vector<std::string> pooled;
  for (const auto& [country, answers] : corpora) {
    for (const auto& a : answers) {
      if (!text::trim(a).empty()) pooled.push_back(a);
    }
  }
  if (pooled.size() < k || k == 0) {
    fail(ErrorCode::TooFewPoints, std::to_string(pooled.size()) + " answers for k=" + std::to_string(k));
  }
  EmbeddingCache local;
  const auto vectors = (cache ? *cache : local).embed(gateway, pooled);
  const auto clustering = kmeans(vectors, {k, seed});
  std::vector<std::vector<std::string>> members(k);
  for (std::size_t i = 0; i < pooled.size(); ++i) members[clustering.assignments[i]].push_back(pooled[i]);
  std::vector<std::string> labels;
  for (const auto& m : members) {
    for (const auto& c : synthesize_concepts(gateway, m)) {
      if (std::find(labels.begin(), labels.end(), c.label) == labels.end()) {
        labels.push_back(c.label);
        break;
      }
    }
  }
  return labels;
}

}  // namespace carto::concepts
