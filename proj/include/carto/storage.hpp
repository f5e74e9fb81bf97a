#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carto/error.hpp"
#include "carto/knowledge_tree.hpp"
#include "carto/stats.hpp"
#include "carto/text.hpp"

namespace carto::storage {

using ojson = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

template <typename E>
ojson optional_enum(const std::optional<E>& v) {
  return v ? ojson(std::string(to_string(*v))) : ojson(nullptr);
}

template <typename T>
ojson optional_value(const std::optional<T>& v) {
  return v ? ojson(*v) : ojson(nullptr);
}

inline ojson to_json(const KnowledgeNode& n) {
  ojson j = ojson::object();
  j["id"] = n.id.value;
  j["parent"] = n.parent.valid() ? ojson(n.parent.value) : ojson(nullptr);
  j["kind"] = to_string(n.kind);
  j["text"] = n.text;
  j["author"] = to_string(n.author);
  j["locality"] = optional_enum(n.locality);
  j["confidence"] = optional_value(n.confidence);
  j["quality_score"] = optional_value(n.quality_score);
  j["scores"] = n.scores;
  j["validated"] = n.validated;
  j["state"] = to_string(n.state);
  j["created_at"] = n.created_at;
  j["modified_at"] = n.modified_at;
  std::vector<std::uint64_t> children;
  for (NodeId c : n.children) children.push_back(c.value);
  j["children"] = children;
  return j;
}

inline KnowledgeNode node_from_json(const ojson& j) {
  KnowledgeNode n;
  n.id = NodeId{j.at("id").get<std::uint64_t>()};
  if (!j.at("parent").is_null()) n.parent = NodeId{j.at("parent").get<std::uint64_t>()};
  n.kind = parse_node_kind(j.at("kind").get<std::string>());
  n.text = j.at("text").get<std::string>();
  n.author = parse_author(j.at("author").get<std::string>());
  if (!j.at("locality").is_null()) n.locality = parse_locality(j.at("locality").get<std::string>());
  if (!j.at("confidence").is_null()) n.confidence = j.at("confidence").get<double>();
  if (!j.at("quality_score").is_null()) n.quality_score = j.at("quality_score").get<int>();
  n.scores = j.at("scores").get<std::map<std::string, int>>();
  n.validated = j.at("validated").get<bool>();
  n.state = parse_node_state(j.at("state").get<std::string>());
  n.created_at = j.at("created_at").get<Timestamp>();
  n.modified_at = j.at("modified_at").get<Timestamp>();
  for (auto c : j.at("children").get<std::vector<std::uint64_t>>()) n.children.push_back(NodeId{c});
  return n;
}

inline ojson to_json(const EditEvent& e) {
  ojson j = ojson::object();
  j["node"] = e.node.value;
  j["kind"] = to_string(e.kind);
  j["actor"] = to_string(e.actor);
  j["before_text"] = e.before_text;
  j["after_text"] = e.after_text;
  j["char_distance"] = e.char_distance;
  j["timestamp"] = e.timestamp;
  j["version"] = e.version;
  if (e.parent.valid()) j["parent"] = e.parent.value;
  if (e.node_kind) j["node_kind"] = to_string(*e.node_kind);
  if (e.locality) j["locality"] = to_string(*e.locality);
  if (e.confidence) j["confidence"] = *e.confidence;
  if (e.score) j["score"] = *e.score;
  if (!e.annotator.empty()) j["annotator"] = e.annotator;
  return j;
}

inline EditEvent event_from_json(const ojson& j) {
  EditEvent e;
  e.node = NodeId{j.at("node").get<std::uint64_t>()};
  e.kind = parse_event_kind(j.at("kind").get<std::string>());
  e.actor = parse_author(j.at("actor").get<std::string>());
  e.before_text = j.at("before_text").get<std::string>();
  e.after_text = j.at("after_text").get<std::string>();
  e.char_distance = j.at("char_distance").get<std::size_t>();
  e.timestamp = j.at("timestamp").get<Timestamp>();
  e.version = j.at("version").get<std::uint64_t>();
  if (j.contains("parent")) e.parent = NodeId{j.at("parent").get<std::uint64_t>()};
  if (j.contains("node_kind")) e.node_kind = parse_node_kind(j.at("node_kind").get<std::string>());
  if (j.contains("locality")) e.locality = parse_locality(j.at("locality").get<std::string>());
  if (j.contains("confidence")) e.confidence = j.at("confidence").get<double>();
  if (j.contains("score")) e.score = j.at("score").get<int>();
  if (j.contains("annotator")) e.annotator = j.at("annotator").get<std::string>();
  return e;
}

inline ojson to_json(const SessionMeta& m) {
  ojson j = ojson::object();
  j["country"] = m.country;
  j["language"] = m.language;
  j["annotator"] = m.annotator;
  j["seed_topic"] = m.seed_topic;
  return j;
}

inline SessionMeta meta_from_json(const ojson& j) {
  return {j.at("country").get<std::string>(), j.at("language").get<std::string>(),
          j.at("annotator").get<std::string>(), j.at("seed_topic").get<std::string>()};
}

inline ojson ledger_summary(const RewardLedger& ledger) {
  ojson j = ojson::object();
  j["reward_rate"] = ledger.reward_rate;
  std::vector<std::string> kinds;
  for (auto k : ledger.counted_kinds) kinds.emplace_back(to_string(k));
  j["counted_kinds"] = kinds;
  j["total_chars"] = ledger.total_chars();
  j["bonus"] = compute_bonus(ledger).str();
  return j;
}

/// Snapshot of the nodes; Deleted nodes are left out unless `include_deleted`.
inline ojson nodes_json(const KnowledgeTree& tree, bool include_deleted) {
  ojson nodes = ojson::array();
  for (const auto& [id, n] : tree.nodes()) {
    if (include_deleted || n.active()) {
      ojson j = to_json(n);
      if (!include_deleted) {
        std::vector<std::uint64_t> live;
        for (NodeId c : n.children) {
          if (tree.node(c).active()) live.push_back(c.value);
        }
        j["children"] = live;
      }
      nodes.push_back(std::move(j));
    }
  }
  return nodes;
}

inline std::string checksum_of(const ojson& body) { return text::to_hex(text::fnv1a64(body.dump())); }

inline ojson session_to_json(const KnowledgeTree& tree) {
  ojson j = ojson::object();
  j["schema_version"] = kSchemaVersion;
  j["meta"] = to_json(tree.meta());
  j["version"] = tree.version();
  j["root"] = tree.root().value;
  j["nodes"] = nodes_json(tree, true);
  ojson events = ojson::array();
  for (const auto& e : tree.events()) events.push_back(to_json(e));
  j["events"] = std::move(events);
  j["ledger"] = ledger_summary(tree.ledger());
  j["checksum"] = checksum_of(j);
  return j;
}

inline std::string session_to_string(const KnowledgeTree& tree) { return session_to_json(tree).dump(1) + "\n"; }

/// Parses, checks schema and checksum, replays the events and verifies the
/// replayed nodes against the stored table.
inline KnowledgeTree session_from_string(const std::string& data) {
  ojson j = ojson::parse(data, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::CorruptFile, "session file is not valid JSON");
  if (j.empty() || j.begin().key() != "schema_version" || !j.begin()->is_number_integer()) {
    fail(ErrorCode::CorruptFile, "session file must start with schema_version");
  }
  const auto schema = j.at("schema_version").get<int>();
  if (schema != kSchemaVersion) {
    fail(ErrorCode::SchemaVersionMismatch,
         "schema " + std::to_string(schema) + ", this build reads " + std::to_string(kSchemaVersion));
  }
  if (!j.contains("checksum") || !j.at("checksum").is_string()) fail(ErrorCode::CorruptFile, "missing checksum");
  const auto stored = j.at("checksum").get<std::string>();
  j.erase("checksum");
  if (checksum_of(j) != stored) fail(ErrorCode::CorruptFile, "checksum mismatch");
  try {
    const auto meta = meta_from_json(j.at("meta"));
    RewardConfig reward;
    reward.reward_rate = j.at("ledger").at("reward_rate").get<double>();
    reward.counted_kinds.clear();
    for (const auto& k : j.at("ledger").at("counted_kinds")) reward.counted_kinds.insert(parse_event_kind(k.get<std::string>()));
    std::vector<EditEvent> events;
    for (const auto& e : j.at("events")) events.push_back(event_from_json(e));
    auto tree = KnowledgeTree::replay(meta, events, reward);
    std::map<NodeId, KnowledgeNode> stored_nodes;
    for (const auto& n : j.at("nodes")) {
      auto node = node_from_json(n);
      stored_nodes.emplace(node.id, std::move(node));
    }
    if (stored_nodes != tree.nodes() || j.at("version").get<std::uint64_t>() != tree.version()) {
      fail(ErrorCode::CorruptFile, "node table does not match the event log");
    }
    return tree;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("malformed session: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptFile) throw;
    fail(ErrorCode::CorruptFile, std::string("invalid session content: ") + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary file and a rename so readers never see a partial file.
inline void write_file(const std::string& path, const std::string& data) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const auto tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + tmp);
    out << data;
    if (!out) fail(ErrorCode::IoError, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) fail(ErrorCode::IoError, "cannot move " + tmp + " to " + path + ": " + ec.message());
}

inline void save_session(const KnowledgeTree& tree, const std::string& path) { write_file(path, session_to_string(tree)); }

inline KnowledgeTree load_session(const std::string& path) { return session_from_string(read_file(path)); }

// ---------------------------------------------------------------------------
// CSV scores

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// RFC 4180 records (quoted fields may contain commas, quotes and newlines).
inline std::vector<std::vector<std::string>> parse_csv(std::string_view data) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const char c = data[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < data.size() && data[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) fail(ErrorCode::InvalidArgument, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string scores_csv(const std::vector<stats::LikertRecord>& records) {
  std::string out = "answer_id,annotator_id,score\n";
  for (const auto& r : records) {
    out += to_string(r.answer) + "," + csv_field(r.annotator) + "," + std::to_string(r.score) + "\n";
  }
  return out;
}

inline std::vector<stats::LikertRecord> parse_scores_csv(std::string_view data) {
  auto rows = parse_csv(data);
  std::vector<stats::LikertRecord> out;
  if (rows.empty()) return out;
  if (rows.front().size() == 3 && rows.front()[0] == "answer_id") rows.erase(rows.begin());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 3) fail(ErrorCode::InvalidArgument, "score row " + std::to_string(i + 1) + " needs 3 fields");
    stats::LikertRecord rec;
    try {
      std::size_t used = 0;
      rec.answer = NodeId{std::stoull(r[0], &used)};
      if (used != r[0].size()) throw std::invalid_argument(r[0]);
      rec.score = std::stoi(r[2], &used);
      if (used != r[2].size()) throw std::invalid_argument(r[2]);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "bad number in score row " + std::to_string(i + 1));
    }
    rec.annotator = r[1];
    if (rec.score < 0 || rec.score > 3) fail(ErrorCode::ScoreOutOfRange, "score row " + std::to_string(i + 1));
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace carto::storage
