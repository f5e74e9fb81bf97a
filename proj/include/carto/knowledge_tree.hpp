#pragma once

#include <chrono>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "carto/edit_distance.hpp"
#include "carto/error.hpp"

namespace carto {

struct NodeId {
  std::uint64_t value = 0;

  [[nodiscard]] bool valid() const noexcept { return value != 0; }
  auto operator<=>(const NodeId&) const = default;
};

inline std::string to_string(NodeId id) { return std::to_string(id.value); }

enum class NodeKind { Concept, Question, Answer };
enum class Author { Model, Human };
enum class Locality { Universal, Local, Unique };
enum class NodeState { Active, Deleted };
enum class EventKind { Create, Edit, Delete, Regenerate, Validate, Score, Probe };
enum class Difficulty { Confident, Uncertain };

constexpr std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Concept: return "concept";
    case NodeKind::Question: return "question";
    case NodeKind::Answer: return "answer";
  }
  return "";
}
constexpr std::string_view to_string(Author a) { return a == Author::Model ? "model" : "human"; }
constexpr std::string_view to_string(Locality l) {
  switch (l) {
    case Locality::Universal: return "universal";
    case Locality::Local: return "local";
    case Locality::Unique: return "unique";
  }
  return "";
}
constexpr std::string_view to_string(NodeState s) {
  return s == NodeState::Active ? "active" : "deleted";
}
constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Create: return "create";
    case EventKind::Edit: return "edit";
    case EventKind::Delete: return "delete";
    case EventKind::Regenerate: return "regenerate";
    case EventKind::Validate: return "validate";
    case EventKind::Score: return "score";
    case EventKind::Probe: return "probe";
  }
  return "";
}
constexpr std::string_view to_string(Difficulty d) {
  return d == Difficulty::Confident ? "confident" : "uncertain";
}

namespace detail {
template <typename E, std::size_t N>
E parse_enum(std::string_view s, const E (&values)[N], std::string_view what) {
  for (E v : values) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorCode::InvalidArgument, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}
}  // namespace detail

inline NodeKind parse_node_kind(std::string_view s) {
  static constexpr NodeKind all[] = {NodeKind::Concept, NodeKind::Question, NodeKind::Answer};
  return detail::parse_enum(s, all, "node kind");
}
inline Author parse_author(std::string_view s) {
  static constexpr Author all[] = {Author::Model, Author::Human};
  return detail::parse_enum(s, all, "author");
}
inline Locality parse_locality(std::string_view s) {
  static constexpr Locality all[] = {Locality::Universal, Locality::Local, Locality::Unique};
  return detail::parse_enum(s, all, "locality");
}
inline NodeState parse_node_state(std::string_view s) {
  static constexpr NodeState all[] = {NodeState::Active, NodeState::Deleted};
  return detail::parse_enum(s, all, "node state");
}
inline EventKind parse_event_kind(std::string_view s) {
  static constexpr EventKind all[] = {EventKind::Create,   EventKind::Edit,
                                      EventKind::Delete,   EventKind::Regenerate,
                                      EventKind::Validate, EventKind::Score,
                                      EventKind::Probe};
  return detail::parse_enum(s, all, "event kind");
}

/// Milliseconds since the Unix epoch.
using Timestamp = std::int64_t;

inline Timestamp system_now() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline bool valid_child_kind(NodeKind parent, NodeKind child) {
  return (parent == NodeKind::Concept && child == NodeKind::Question) ||
         (parent == NodeKind::Question && child == NodeKind::Answer) ||
         (parent == NodeKind::Answer && child == NodeKind::Question);
}

struct KnowledgeNode {
  NodeId id;
  NodeId parent;  // invalid for the root
  NodeKind kind = NodeKind::Concept;
  std::string text;
  Author author = Author::Model;
  std::optional<Locality> locality;    // answers only
  std::optional<double> confidence;    // model answers only
  std::optional<int> quality_score;    // most recent score, answers only
  std::map<std::string, int> scores;   // annotator -> score
  bool validated = false;
  NodeState state = NodeState::Active;
  Timestamp created_at = 0;
  Timestamp modified_at = 0;
  std::vector<NodeId> children;

  [[nodiscard]] bool active() const noexcept { return state == NodeState::Active; }
  bool operator==(const KnowledgeNode&) const = default;
};

/// One entry of the append-only session log. Besides the text delta, each
/// event carries enough payload to be replayed onto an empty tree.
struct EditEvent {
  NodeId node;
  EventKind kind = EventKind::Create;
  Author actor = Author::Model;
  std::string before_text;
  std::string after_text;
  std::size_t char_distance = 0;
  Timestamp timestamp = 0;
  std::uint64_t version = 0;  // tree version after the owning mutation

  // replay payload
  NodeId parent;                       // Create
  std::optional<NodeKind> node_kind;   // Create
  std::optional<Locality> locality;    // Create / Regenerate
  std::optional<double> confidence;    // Create / Regenerate / Probe
  std::optional<int> score;            // Score
  std::string annotator;               // Score

  bool operator==(const EditEvent&) const = default;
};

struct Money {
  std::int64_t cents = 0;

  [[nodiscard]] double value() const { return static_cast<double>(cents) / 100.0; }
  [[nodiscard]] std::string str() const {
    const auto whole = cents / 100;
    const auto frac = cents % 100;
    return std::to_string(whole) + "." + (frac < 10 ? "0" : "") + std::to_string(frac);
  }
  auto operator<=>(const Money&) const = default;
};

struct RewardLedger {
  std::vector<EditEvent> events;
  double reward_rate = 0.005;  // currency per character
  std::set<EventKind> counted_kinds{EventKind::Create, EventKind::Edit};

  [[nodiscard]] bool eligible(const EditEvent& e) const {
    return e.actor == Author::Human && counted_kinds.contains(e.kind);
  }

  [[nodiscard]] std::uint64_t total_chars() const {
    std::uint64_t total = 0;
    for (const auto& e : events) {
      if (eligible(e)) total += e.char_distance;
    }
    return total;
  }

  bool operator==(const RewardLedger&) const = default;
};

/// Eligible characters times the rate, rounded half-up to cents.
inline Money compute_bonus(const RewardLedger& ledger) {
  if (ledger.reward_rate < 0) fail(ErrorCode::InvalidArgument, "negative reward rate");
  const long double raw = static_cast<long double>(ledger.total_chars()) *
                          static_cast<long double>(ledger.reward_rate) * 100.0L;
  return Money{static_cast<std::int64_t>(std::floor(raw + 0.5L + 1e-9L))};
}

struct SessionMeta {
  std::string country;     // e.g. "nga"
  std::string language;    // e.g. "en"
  std::string annotator;   // pseudonym
  std::string seed_topic;  // original seed text
  bool operator==(const SessionMeta&) const = default;
};

struct RewardConfig {
  double reward_rate = 0.005;
  std::set<EventKind> counted_kinds{EventKind::Create, EventKind::Edit};
};

/// Extra attributes a model-created answer carries at creation.
struct NodeAnnotations {
  std::optional<Locality> locality;
  std::optional<double> confidence;
};

/// The alternating Concept -> Question -> Answer -> Question tree of one
/// elicitation session. Single-writer; copies are independent snapshots.
class KnowledgeTree {
 public:
  using Clock = std::function<Timestamp()>;

  explicit KnowledgeTree(SessionMeta meta, RewardConfig reward = {}, Clock clock = system_now)
      : meta_(std::move(meta)), clock_(std::move(clock)) {
    ledger_.reward_rate = reward.reward_rate;
    ledger_.counted_kinds = std::move(reward.counted_kinds);
    if (text::trim(meta_.seed_topic).empty()) fail(ErrorCode::EmptyText, "seed topic is empty");
    EditEvent e;
    e.node = NodeId{1};
    e.kind = EventKind::Create;
    e.actor = Author::Model;
    e.after_text = meta_.seed_topic;
    e.char_distance = char_edit_distance("", e.after_text);
    e.timestamp = clock_();
    e.version = 1;
    e.node_kind = NodeKind::Concept;
    apply_event(e);
  }

  /// Rebuilds a tree from its event log. The first event must create the root.
  static KnowledgeTree replay(SessionMeta meta, const std::vector<EditEvent>& events,
                              RewardConfig reward = {}, Clock clock = system_now) {
    KnowledgeTree tree(std::move(meta), std::move(reward), std::move(clock), EmptyTag{});
    for (const auto& e : events) tree.apply_event(e);
    if (!tree.root_.valid()) fail(ErrorCode::CorruptFile, "event log does not create a root");
    return tree;
  }

  [[nodiscard]] NodeId root() const noexcept { return root_; }
  [[nodiscard]] std::uint64_t version() const noexcept { return version_; }
  [[nodiscard]] const SessionMeta& meta() const noexcept { return meta_; }
  [[nodiscard]] const RewardLedger& ledger() const noexcept { return ledger_; }
  [[nodiscard]] const std::vector<EditEvent>& events() const noexcept { return ledger_.events; }
  [[nodiscard]] const std::map<NodeId, KnowledgeNode>& nodes() const noexcept { return nodes_; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  void set_clock(Clock clock) { clock_ = std::move(clock); }

  [[nodiscard]] const KnowledgeNode* find(NodeId id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
  }

  [[nodiscard]] const KnowledgeNode& node(NodeId id) const {
    const auto* n = find(id);
    if (!n) fail(ErrorCode::UnknownNode, "no node " + to_string(id));
    return *n;
  }

  [[nodiscard]] std::size_t depth(NodeId id) const {
    std::size_t d = 0;
    for (NodeId cur = node(id).parent; cur.valid(); cur = node(cur).parent) ++d;
    return d;
  }

  [[nodiscard]] std::vector<NodeId> active_children(NodeId id) const {
    std::vector<NodeId> out;
    for (NodeId c : node(id).children) {
      if (node(c).active()) out.push_back(c);
    }
    return out;
  }

  /// Pre-order traversal of Active nodes, children in sibling order.
  [[nodiscard]] std::vector<NodeId> active_nodes() const {
    std::vector<NodeId> out;
    if (!root_.valid()) return out;
    std::vector<NodeId> stack{root_};
    while (!stack.empty()) {
      const NodeId id = stack.back();
      stack.pop_back();
      const auto& n = node(id);
      if (!n.active()) continue;
      out.push_back(id);
      for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
    }
    return out;
  }

  /// True when a human changed the node's text at least once.
  [[nodiscard]] bool human_edited(NodeId id) const {
    for (const auto& e : ledger_.events) {
      if (e.node == id && e.kind == EventKind::Edit && e.actor == Author::Human &&
          e.char_distance > 0) {
        return true;
      }
    }
    return false;
  }

  [[nodiscard]] std::size_t validated_count() const {
    std::size_t n = 0;
    for (const auto& [id, node] : nodes_) {
      if (node.active() && node.validated) ++n;
    }
    return n;
  }

  NodeId add_node(NodeId parent, NodeKind kind, std::string text, Author author,
                  NodeAnnotations extra = {}) {
    const auto* p = find(parent);
    if (!p || !p->active()) fail(ErrorCode::UnknownParent, "no active parent " + to_string(parent));
    if (!valid_child_kind(p->kind, kind)) {
      fail(ErrorCode::KindViolation, std::string(to_string(kind)) + " cannot be a child of " +
                                         std::string(to_string(p->kind)));
    }
    require_text(text);
    if (kind != NodeKind::Answer && (extra.locality || extra.confidence)) {
      fail(ErrorCode::WrongKind, "locality and confidence apply to answers only");
    }
    if (extra.confidence && author != Author::Model) {
      fail(ErrorCode::InvalidArgument, "confidence is attached to model answers only");
    }
    check_probability(extra.confidence);
    EditEvent e = make_event(NodeId{next_id_}, EventKind::Create, author);
    e.after_text = std::move(text);
    e.char_distance = char_edit_distance("", e.after_text);
    e.parent = parent;
    e.node_kind = kind;
    e.locality = extra.locality;
    e.confidence = extra.confidence;
    apply_event(e);
    return e.node;
  }

  EditEvent edit_node(NodeId id, std::string new_text, Author actor) {
    const auto& n = require_active(id);
    require_text(new_text);
    EditEvent e = make_event(id, EventKind::Edit, actor);
    e.before_text = n.text;
    e.char_distance = char_edit_distance(n.text, new_text);
    e.after_text = std::move(new_text);
    apply_event(e);
    return ledger_.events.back();
  }

  /// Soft-deletes the node and its Active subtree; returns the deleted ids.
  std::vector<NodeId> delete_node(NodeId id, Author actor = Author::Human) {
    require_active(id);
    if (id == root_) fail(ErrorCode::CannotDeleteRoot, "the seed topic cannot be deleted");
    std::vector<NodeId> doomed;
    std::vector<NodeId> stack{id};
    while (!stack.empty()) {
      const NodeId cur = stack.back();
      stack.pop_back();
      const auto& n = node(cur);
      if (!n.active()) continue;
      doomed.push_back(cur);
      for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
    }
    const std::uint64_t v = version_ + 1;
    const Timestamp now = clock_();
    for (NodeId d : doomed) {
      EditEvent e;
      e.node = d;
      e.kind = EventKind::Delete;
      e.actor = actor;
      e.before_text = node(d).text;
      e.char_distance = char_edit_distance(e.before_text, "");
      e.timestamp = now;
      e.version = v;
      apply_event(e);
    }
    return doomed;
  }

  void validate_node(NodeId id, Author actor = Author::Human) {
    require_active(id);
    apply_event(make_event(id, EventKind::Validate, actor));
  }

  void score_node(NodeId id, int score, std::string annotator) {
    const auto& n = require_active(id);
    if (n.kind != NodeKind::Answer) fail(ErrorCode::WrongKind, "only answers can be scored");
    if (score < 0 || score > 3) {
      fail(ErrorCode::ScoreOutOfRange, "score " + std::to_string(score) + " outside 0..3");
    }
    EditEvent e = make_event(id, EventKind::Score, Author::Human);
    e.score = score;
    e.annotator = std::move(annotator);
    apply_event(e);
  }

  /// Replaces a model node's text in place, keeping its id, position and children.
  EditEvent regenerate_node(NodeId id, std::string new_text, NodeAnnotations extra = {}) {
    const auto& n = require_active(id);
    if (n.author != Author::Model) {
      fail(ErrorCode::CannotRegenerateHumanNode, "node " + to_string(id) + " is human-authored");
    }
    require_text(new_text);
    if (n.kind != NodeKind::Answer && (extra.locality || extra.confidence)) {
      fail(ErrorCode::WrongKind, "locality and confidence apply to answers only");
    }
    check_probability(extra.confidence);
    EditEvent e = make_event(id, EventKind::Regenerate, Author::Model);
    e.before_text = n.text;
    e.char_distance = char_edit_distance(n.text, new_text);
    e.after_text = std::move(new_text);
    e.locality = extra.locality;
    e.confidence = extra.confidence;
    apply_event(e);
    return ledger_.events.back();
  }

  /// Attaches a freshly probed confidence to a model answer.
  void set_confidence(NodeId id, double confidence) {
    const auto& n = require_active(id);
    if (n.kind != NodeKind::Answer || n.author != Author::Model) {
      fail(ErrorCode::WrongKind, "confidence is attached to model answers only");
    }
    check_probability(confidence);
    EditEvent e = make_event(id, EventKind::Probe, Author::Model);
    e.confidence = confidence;
    apply_event(e);
  }

  bool operator==(const KnowledgeTree& other) const {
    return meta_ == other.meta_ && nodes_ == other.nodes_ && root_ == other.root_ &&
           version_ == other.version_ && next_id_ == other.next_id_ && ledger_ == other.ledger_;
  }

 private:
  struct EmptyTag {};
  KnowledgeTree(SessionMeta meta, RewardConfig reward, Clock clock, EmptyTag)
      : meta_(std::move(meta)), clock_(std::move(clock)) {
    ledger_.reward_rate = reward.reward_rate;
    ledger_.counted_kinds = std::move(reward.counted_kinds);
    version_ = 0;
  }

  static void require_text(std::string_view text) {
    if (text::trim(text).empty()) fail(ErrorCode::EmptyText, "node text is empty");
  }

  static void check_probability(std::optional<double> p) {
    if (p && !(*p >= 0.0 && *p <= 1.0)) {
      fail(ErrorCode::InvalidArgument, "confidence outside [0,1]");
    }
  }

  const KnowledgeNode& require_active(NodeId id) const {
    const auto& n = node(id);
    if (!n.active()) fail(ErrorCode::NodeDeleted, "node " + to_string(id) + " is deleted");
    return n;
  }

  EditEvent make_event(NodeId id, EventKind kind, Author actor) const {
    EditEvent e;
    e.node = id;
    e.kind = kind;
    e.actor = actor;
    e.timestamp = clock_();
    e.version = version_ + 1;
    return e;
  }

  KnowledgeNode& mutable_node(NodeId id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) fail(ErrorCode::CorruptFile, "event refers to missing node");
    return it->second;
  }

  // Single mutation path shared by live operations and replay.
  void apply_event(const EditEvent& e) {
    if (e.version < version_) fail(ErrorCode::CorruptFile, "event versions go backwards");
    switch (e.kind) {
      case EventKind::Create: {
        if (!e.node_kind) fail(ErrorCode::CorruptFile, "create event without node kind");
        if (nodes_.contains(e.node) || e.node.value < next_id_) {
          fail(ErrorCode::CorruptFile, "node id reused");
        }
        KnowledgeNode n;
        n.id = e.node;
        n.parent = e.parent;
        n.kind = *e.node_kind;
        n.text = e.after_text;
        n.author = e.actor;
        n.locality = e.locality;
        n.confidence = e.confidence;
        n.created_at = n.modified_at = e.timestamp;
        if (e.parent.valid()) {
          auto& p = mutable_node(e.parent);
          if (!p.active() || !valid_child_kind(p.kind, n.kind)) {
            fail(ErrorCode::CorruptFile, "create event violates tree invariants");
          }
          p.children.push_back(n.id);
        } else {
          if (root_.valid() || n.kind != NodeKind::Concept) {
            fail(ErrorCode::CorruptFile, "second root or non-concept root");
          }
          root_ = n.id;
        }
        nodes_.emplace(n.id, std::move(n));
        next_id_ = e.node.value + 1;
        break;
      }
      case EventKind::Edit: {
        auto& n = mutable_node(e.node);
        n.text = e.after_text;
        n.confidence.reset();
        n.modified_at = e.timestamp;
        break;
      }
      case EventKind::Regenerate: {
        auto& n = mutable_node(e.node);
        n.text = e.after_text;
        n.confidence = e.confidence;
        if (e.locality) n.locality = e.locality;
        n.modified_at = e.timestamp;
        break;
      }
      case EventKind::Delete: {
        auto& n = mutable_node(e.node);
        n.state = NodeState::Deleted;
        n.modified_at = e.timestamp;
        break;
      }
      case EventKind::Validate: {
        auto& n = mutable_node(e.node);
        n.validated = true;
        n.modified_at = e.timestamp;
        break;
      }
      case EventKind::Score: {
        auto& n = mutable_node(e.node);
        if (!e.score) fail(ErrorCode::CorruptFile, "score event without score");
        n.quality_score = e.score;
        n.scores[e.annotator] = *e.score;
        n.modified_at = e.timestamp;
        break;
      }
      case EventKind::Probe: {
        auto& n = mutable_node(e.node);
        n.confidence = e.confidence;
        break;
      }
    }
    version_ = e.version;
    ledger_.events.push_back(e);
  }

  SessionMeta meta_;
  Clock clock_;
  std::map<NodeId, KnowledgeNode> nodes_;
  NodeId root_;
  std::uint64_t version_ = 0;
  std::uint64_t next_id_ = 1;
  RewardLedger ledger_;
};

/// Aggregates a question's model-answer confidences (arithmetic mean).
inline Difficulty question_difficulty(const KnowledgeTree& tree, NodeId question,
                                      double threshold = 0.4) {
  const auto& q = tree.node(question);
  if (q.kind != NodeKind::Question) fail(ErrorCode::WrongKind, "not a question");
  double sum = 0;
  std::size_t n = 0;
  for (NodeId c : tree.active_children(question)) {
    const auto& a = tree.node(c);
    if (a.author == Author::Model && a.confidence) {
      sum += *a.confidence;
      ++n;
    }
  }
  if (n == 0) fail(ErrorCode::NoScoredChildren, "question has no probed model answers");
  // Round off representation noise so that e.g. mean(0.39, 0.41) sits on 0.4.
  const double mean = std::round(sum / static_cast<double>(n) * 1e12) / 1e12;
  return mean <= threshold ? Difficulty::Uncertain : Difficulty::Confident;
}

}  // namespace carto

template <>
struct std::hash<carto::NodeId> {
  std::size_t operator()(carto::NodeId id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
