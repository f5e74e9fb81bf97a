#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "carto/error.hpp"
#include "carto/knowledge_tree.hpp"
#include "carto/llm/gateway.hpp"
#include "carto/llm/prompt.hpp"

namespace carto {

enum class GenerationKind { Questions, Answers, Followups, Regenerate };
enum class JobStatus { Pending, Running, Applied, Failed };

constexpr std::string_view to_string(GenerationKind k) {
  switch (k) {
    case GenerationKind::Questions: return "questions";
    case GenerationKind::Answers: return "answers";
    case GenerationKind::Followups: return "followups";
    case GenerationKind::Regenerate: return "regenerate";
  }
  return "?";
}

constexpr std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Pending: return "pending";
    case JobStatus::Running: return "running";
    case JobStatus::Applied: return "applied";
    case JobStatus::Failed: return "failed";
  }
  return "?";
}

inline GenerationKind parse_generation_kind(std::string_view s) {
  static constexpr GenerationKind all[] = {GenerationKind::Questions, GenerationKind::Answers,
                                           GenerationKind::Followups, GenerationKind::Regenerate};
  return detail::parse_enum(s, all, "generation kind");
}

struct GenerationJob {
  std::uint64_t id = 0;
  NodeId target;
  GenerationKind kind = GenerationKind::Questions;
  std::size_t n = 5;
  JobStatus status = JobStatus::Pending;
  std::uint64_t submitted_version = 0;
  std::uint64_t applied_version = 0;
  std::vector<NodeId> created;
  std::string error;
};

struct ElicitationOptions {
  std::size_t max_items = 5;         // cap on questions/answers per call
  int empty_retries = 2;             // extra attempts when nothing parses
  int probe_samples = llm::kFallbackSamples;
  std::size_t max_depth = 10;
};

/// Snapshot of everything a generation needs from the tree, taken when the
/// job starts running so edits made before then are honoured.
struct GenerationPlan {
  GenerationKind kind = GenerationKind::Questions;
  NodeId target;
  std::size_t n = 0;
  std::string prompt;
  std::string target_text;    // text the generation is conditioned on
  std::string question_text;  // for answers: the question the probe refers to
  NodeKind child_kind = NodeKind::Question;
  std::string current_text;   // regenerate: text being replaced
};

struct GeneratedItem {
  std::string text;
  std::optional<Locality> locality;
  std::optional<double> confidence;
};

struct GenerationResult {
  std::vector<GeneratedItem> items;
  int attempts = 0;
};

inline GenerationPlan prepare_generation(const KnowledgeTree& tree, const llm::TemplateSet& templates,
                                         GenerationKind kind, NodeId target, std::size_t n,
                                         const ElicitationOptions& opts = {}) {
  const auto* node = tree.find(target);
  if (!node) fail(ErrorCode::UnknownNode, "no node " + to_string(target));
  if (!node->active()) {
    fail(kind == GenerationKind::Regenerate ? ErrorCode::NodeDeleted : ErrorCode::UnknownParent,
         "node " + to_string(target) + " is deleted");
  }
  GenerationPlan plan;
  plan.kind = kind;
  plan.target = target;
  plan.n = std::min(n, opts.max_items);
  switch (kind) {
    case GenerationKind::Questions:
    case GenerationKind::Followups: {
      const bool followup = kind == GenerationKind::Followups;
      if (followup ? node->kind != NodeKind::Answer
                   : node->kind != NodeKind::Concept && node->kind != NodeKind::Answer) {
        fail(ErrorCode::WrongKind, "cannot generate questions under a " +
                                       std::string(to_string(node->kind)));
      }
      plan.child_kind = NodeKind::Question;
      plan.target_text = node->text;
      plan.prompt = llm::render_prompt(templates.questions, node->text);
      break;
    }
    case GenerationKind::Answers:
      if (node->kind != NodeKind::Question) fail(ErrorCode::WrongKind, "answers need a question");
      plan.child_kind = NodeKind::Answer;
      plan.target_text = node->text;
      plan.question_text = node->text;
      plan.prompt = llm::render_prompt(templates.answers, node->text);
      break;
    case GenerationKind::Regenerate: {
      if (node->author != Author::Model) {
        fail(ErrorCode::CannotRegenerateHumanNode, "node " + to_string(target) + " is human-authored");
      }
      if (!node->parent.valid()) fail(ErrorCode::InvalidArgument, "the seed topic cannot be regenerated");
      const auto& parent = tree.node(node->parent);
      plan.n = 1;
      plan.child_kind = node->kind;
      plan.target_text = parent.text;
      plan.current_text = node->text;
      if (node->kind == NodeKind::Answer) {
        plan.question_text = parent.text;
        plan.prompt = llm::render_prompt(templates.answers, parent.text);
      } else {
        plan.prompt = llm::render_prompt(templates.questions, parent.text);
      }
      break;
    }
  }
  return plan;
}

namespace detail {

inline std::vector<GeneratedItem> parse_generation(const GenerationPlan& plan, const std::string& reply) {
  std::vector<GeneratedItem> out;
  // regeneration parses the full list and picks a different item afterwards
  const std::size_t cap = plan.kind == GenerationKind::Regenerate ? SIZE_MAX : plan.n;
  if (plan.child_kind == NodeKind::Answer) {
    for (auto& a : llm::parse_locality_answers(reply, cap)) {
      out.push_back({std::move(a.text), a.locality, std::nullopt});
    }
  } else {
    for (auto& q : llm::parse_tagged_items(reply, "question", cap)) out.push_back({std::move(q), {}, {}});
  }
  if (plan.kind == GenerationKind::Regenerate && !out.empty()) {
    auto pick = std::find_if(out.begin(), out.end(),
                             [&](const GeneratedItem& it) { return it.text != plan.current_text; });
    GeneratedItem chosen = std::move(pick != out.end() ? *pick : out.front());
    out.assign(1, std::move(chosen));
  }
  return out;
}

}  // namespace detail

/// Provider round trip for a plan: no tree access. Answers are probed here.
inline GenerationResult run_generation(llm::Gateway& gateway, const GenerationPlan& plan,
                                       const ElicitationOptions& opts = {}) {
  GenerationResult result;
  if (plan.n == 0) return result;
  for (int attempt = 0; attempt <= opts.empty_retries; ++attempt) {
    ++result.attempts;
    const auto reply = gateway.complete(plan.prompt, llm::kGenerationDecode);
    result.items = detail::parse_generation(plan, reply);
    if (!result.items.empty()) break;
  }
  if (result.items.empty()) {
    fail(ErrorCode::EmptyGeneration, "no " + std::string(to_string(plan.child_kind)) +
                                         " items parsed after " + std::to_string(result.attempts) +
                                         " attempts");
  }
  if (plan.child_kind == NodeKind::Answer) {
    for (auto& item : result.items) {
      item.confidence = llm::answer_confidence(gateway, plan.question_text, item.text, opts.probe_samples);
    }
  }
  return result;
}

/// Writes a result into the tree. Fails if the target vanished meanwhile.
inline std::vector<NodeId> apply_generation(KnowledgeTree& tree, const GenerationPlan& plan,
                                            const GenerationResult& result) {
  std::vector<NodeId> ids;
  if (plan.kind == GenerationKind::Regenerate) {
    const auto& item = result.items.at(0);
    tree.regenerate_node(plan.target, item.text, NodeAnnotations{item.locality, item.confidence});
    ids.push_back(plan.target);
    return ids;
  }
  const auto* parent = tree.find(plan.target);
  if (!parent || !parent->active()) fail(ErrorCode::UnknownParent, "node " + to_string(plan.target) + " is gone");
  for (const auto& item : result.items) {
    if (ids.size() >= plan.n) break;
    ids.push_back(tree.add_node(plan.target, plan.child_kind, item.text, Author::Model,
                                NodeAnnotations{item.locality, item.confidence}));
  }
  return ids;
}

inline std::vector<NodeId> generate(KnowledgeTree& tree, llm::Gateway& gateway,
                                    const llm::TemplateSet& templates, GenerationKind kind, NodeId target,
                                    std::size_t n, const ElicitationOptions& opts = {}) {
  const auto plan = prepare_generation(tree, templates, kind, target, n, opts);
  if (plan.n == 0) return {};
  return apply_generation(tree, plan, run_generation(gateway, plan, opts));
}

inline std::vector<NodeId> generate_questions(KnowledgeTree& tree, llm::Gateway& gateway,
                                              const llm::TemplateSet& templates, NodeId concept_node,
                                              std::size_t n = 5, const ElicitationOptions& opts = {}) {
  return generate(tree, gateway, templates, GenerationKind::Questions, concept_node, n, opts);
}

inline std::vector<NodeId> generate_answers(KnowledgeTree& tree, llm::Gateway& gateway,
                                            const llm::TemplateSet& templates, NodeId question,
                                            std::size_t n = 5, const ElicitationOptions& opts = {}) {
  return generate(tree, gateway, templates, GenerationKind::Answers, question, n, opts);
}

inline std::vector<NodeId> generate_followups(KnowledgeTree& tree, llm::Gateway& gateway,
                                              const llm::TemplateSet& templates, NodeId answer,
                                              std::size_t n = 5, const ElicitationOptions& opts = {}) {
  return generate(tree, gateway, templates, GenerationKind::Followups, answer, n, opts);
}

inline NodeId regenerate(KnowledgeTree& tree, llm::Gateway& gateway, const llm::TemplateSet& templates,
                         NodeId id, const ElicitationOptions& opts = {}) {
  return generate(tree, gateway, templates, GenerationKind::Regenerate, id, 1, opts).at(0);
}

struct BranchFailure {
  NodeId node;
  ErrorCode code;
  std::string message;
};

struct ExpansionReport {
  std::vector<NodeId> created;
  std::vector<BranchFailure> failures;
};

/// Breadth-first alternating generation until every Active leaf sits at
/// `depth` or its branch failed. Leaves already at depth are left alone.
inline ExpansionReport expand_to_depth(KnowledgeTree& tree, llm::Gateway& gateway,
                                       const llm::TemplateSet& templates, std::size_t depth,
                                       std::size_t branching, const ElicitationOptions& opts = {}) {
  if (depth > opts.max_depth) {
    fail(ErrorCode::InvalidArgument,
         "depth " + std::to_string(depth) + " exceeds maximum " + std::to_string(opts.max_depth));
  }
  ExpansionReport report;
  if (branching == 0) return report;
  std::set<NodeId> failed;
  for (std::size_t level = 0; level < depth; ++level) {
    std::vector<NodeId> frontier;
    for (NodeId id : tree.active_nodes()) {
      if (tree.depth(id) == level && tree.active_children(id).empty() && !failed.contains(id)) {
        frontier.push_back(id);
      }
    }
    for (NodeId id : frontier) {
      const auto kind = tree.node(id).kind == NodeKind::Question ? GenerationKind::Answers
                                                                 : GenerationKind::Questions;
      try {
        auto ids = generate(tree, gateway, templates, kind, id, branching, opts);
        report.created.insert(report.created.end(), ids.begin(), ids.end());
      } catch (const Error& e) {
        failed.insert(id);
        report.failures.push_back({id, e.code(), e.message()});
      }
    }
  }
  return report;
}

}  // namespace carto
