#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carto/error.hpp"
#include "carto/eval.hpp"
#include "carto/knowledge_tree.hpp"
#include "carto/stats.hpp"

namespace carto::exporting {

using ojson = nlohmann::ordered_json;
using eval::Subset;

/// Subset an Active answer belongs to, if any:
///   model answer kept by the significance filter      -> Synthetic
///   human answer under an untouched model question    -> Traditional
///   human answer under a human-written/edited question -> Cartography
inline std::optional<Subset> answer_subset(const KnowledgeTree& tree, NodeId answer,
                                           const std::set<NodeId>& retained_model) {
  const auto& a = tree.node(answer);
  if (a.kind != NodeKind::Answer || !a.active()) return std::nullopt;
  if (!stats::human_provenance(tree, answer)) {
    return retained_model.contains(answer) ? std::optional(Subset::Synthetic) : std::nullopt;
  }
  const auto& q = tree.node(a.parent);
  const bool fixed_question = q.author == Author::Model && !tree.human_edited(q.id);
  return fixed_question ? Subset::Traditional : Subset::Cartography;
}

struct SessionInput {
  const KnowledgeTree* tree = nullptr;
  std::vector<stats::LikertRecord> records;  // empty: use the scores stored on the tree
};

inline std::vector<stats::LikertRecord> records_for(const SessionInput& s) {
  return s.records.empty() ? stats::likert_records(*s.tree) : s.records;
}

/// Every subset assignment of every Active answer, per session.
inline std::map<NodeId, Subset> partition_answers(const KnowledgeTree& tree,
                                                  const std::vector<stats::LikertRecord>& records,
                                                  const stats::SignificanceConfig& cfg = {}) {
  const auto kept = stats::retained_model_answers(tree, records, cfg);
  const std::set<NodeId> retained(kept.begin(), kept.end());
  std::map<NodeId, Subset> out;
  for (NodeId id : tree.active_nodes()) {
    if (auto s = answer_subset(tree, id, retained)) out.emplace(id, *s);
  }
  return out;
}

/// Gold items (one per question with at least one answer in the subset).
inline std::vector<eval::GoldItem> export_gold_bank(const std::vector<SessionInput>& sessions, Subset subset,
                                                    const stats::SignificanceConfig& cfg = {}) {
  std::vector<eval::GoldItem> out;
  for (const auto& s : sessions) {
    const auto& tree = *s.tree;
    const auto parts = partition_answers(tree, records_for(s), cfg);
    for (NodeId q : tree.active_nodes()) {
      if (tree.node(q).kind != NodeKind::Question) continue;
      eval::GoldItem item{tree.node(q).text, {}, subset, tree.meta().country};
      for (NodeId a : tree.active_children(q)) {
        auto it = parts.find(a);
        if (it != parts.end() && it->second == subset) item.answers.push_back(tree.node(a).text);
      }
      if (!item.answers.empty()) out.push_back(std::move(item));
    }
  }
  return out;
}

inline std::string gold_bank_jsonl(const std::vector<eval::GoldItem>& items) {
  std::string out;
  for (const auto& g : items) {
    ojson j = ojson::object();
    j["question"] = g.question;
    j["answers"] = g.answers;
    j["subset"] = to_string(g.subset);
    j["country"] = g.country;
    out += j.dump() + "\n";
  }
  return out;
}

struct SftRecord {
  std::string prompt;
  std::string completion;
  NodeId question;
  NodeId answer;
};

struct DpoRecord {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  stats::PairReason reason = stats::PairReason::ScoreSignificant;
  NodeId question;
};

struct TrainingData {
  std::vector<SftRecord> sft;
  std::vector<DpoRecord> dpo;
};

/// SFT: human answers plus model answers kept by the significance filter.
/// DPO: derived preference pairs. Both ordered by question id.
inline TrainingData export_training_data(const std::vector<SessionInput>& sessions,
                                         const stats::SignificanceConfig& cfg = {}) {
  TrainingData data;
  for (const auto& s : sessions) {
    const auto& tree = *s.tree;
    const auto records = records_for(s);
    const auto kept = stats::retained_model_answers(tree, records, cfg);
    const std::set<NodeId> retained(kept.begin(), kept.end());
    std::vector<SftRecord> sft;
    for (NodeId q : tree.active_nodes()) {
      if (tree.node(q).kind != NodeKind::Question) continue;
      for (NodeId a : tree.active_children(q)) {
        if (stats::human_provenance(tree, a) || retained.contains(a)) {
          sft.push_back({tree.node(q).text, tree.node(a).text, q, a});
        }
      }
    }
    std::stable_sort(sft.begin(), sft.end(), [](const auto& x, const auto& y) { return x.question < y.question; });
    data.sft.insert(data.sft.end(), sft.begin(), sft.end());

    std::vector<DpoRecord> dpo;
    for (const auto& p : stats::derive_preference_pairs(tree, records, cfg)) {
      dpo.push_back({p.prompt, p.chosen_text, p.rejected_text, p.reason, p.question});
    }
    std::stable_sort(dpo.begin(), dpo.end(), [](const auto& x, const auto& y) { return x.question < y.question; });
    data.dpo.insert(data.dpo.end(), dpo.begin(), dpo.end());
  }
  return data;
}

inline std::string sft_jsonl(const std::vector<SftRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    ojson j = ojson::object();
    j["prompt"] = r.prompt;
    j["completion"] = r.completion;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string dpo_jsonl(const std::vector<DpoRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    if (r.chosen == r.rejected) fail(ErrorCode::InvalidArgument, "preference pair with identical texts");
    ojson j = ojson::object();
    j["prompt"] = r.prompt;
    j["chosen"] = r.chosen;
    j["rejected"] = r.rejected;
    j["reason"] = to_string(r.reason);
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace carto::exporting
