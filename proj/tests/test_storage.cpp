#include <gtest/gtest.h>

#include <fstream>

#include "carto/storage.hpp"
#include "support.hpp"

using namespace carto;
using namespace carto::storage;
using testing_support::code_of;
using testing_support::make_tree;
using testing_support::random_text;

namespace {

/// Random walk over every mutation kind; failed mutations are simply skipped.
KnowledgeTree random_tree(std::mt19937_64& rng, int steps) {
  auto t = make_tree("Gifts " + std::to_string(rng() % 100));
  for (int s = 0; s < steps; ++s) {
    const auto ids = t.active_nodes();
    const NodeId id = ids[rng() % ids.size()];
    const auto& n = t.node(id);
    try {
      switch (rng() % 7) {
        case 0:
        case 1: {
          const auto kind = n.kind == NodeKind::Question ? NodeKind::Answer : NodeKind::Question;
          const auto who = rng() % 2 ? Author::Model : Author::Human;
          NodeAnnotations extra;
          if (kind == NodeKind::Answer) extra.locality = Locality(rng() % 3);
          if (kind == NodeKind::Answer && who == Author::Model) extra.confidence = double(rng() % 101) / 100.0;
          t.add_node(id, kind, "x" + random_text(rng, 8), who, extra);
          break;
        }
        case 2: t.edit_node(id, "e" + random_text(rng, 10), rng() % 2 ? Author::Human : Author::Model); break;
        case 3: if (id != t.root()) t.delete_node(id); break;
        case 4: t.validate_node(id); break;
        case 5: t.score_node(id, int(rng() % 4), "ann" + std::to_string(rng() % 3)); break;
        case 6: t.regenerate_node(id, "r" + random_text(rng, 6)); break;
      }
    } catch (const Error&) {
    }
  }
  return t;
}

ojson parse(const std::string& s) { return ojson::parse(s); }

std::string reseal(ojson j) {
  j.erase("checksum");
  j["checksum"] = checksum_of(j);
  return j.dump(1);
}

}  // namespace

TEST(Session, RoundTripIsLossless) {
  std::mt19937_64 rng(17);
  for (int inst = 0; inst < 200; ++inst) {
    const auto t = random_tree(rng, 40);
    const auto data = session_to_string(t);
    const auto back = session_from_string(data);
    ASSERT_EQ(back.nodes(), t.nodes());
    ASSERT_EQ(back.version(), t.version());
    ASSERT_EQ(back.ledger().total_chars(), t.ledger().total_chars());
    ASSERT_EQ(session_to_string(back), data);
  }
}

TEST(Session, SchemaVersionComesFirst) {
  const auto data = session_to_string(make_tree());
  EXPECT_EQ(data.rfind("{\n \"schema_version\": 1,", 0), 0u);
  EXPECT_EQ(data.back(), '\n');
}

TEST(Session, DetectsTampering) {
  auto t = make_tree("Weddings");
  auto q = t.add_node(t.root(), NodeKind::Question, "List customs.", Author::Model);
  t.add_node(q, NodeKind::Answer, "dowry", Author::Human);
  const auto data = session_to_string(t);

  auto flipped = data;
  flipped.replace(flipped.find("dowry"), 5, "dowrY");
  EXPECT_EQ(code_of([&] { session_from_string(flipped); }), ErrorCode::CorruptFile);

  auto j = parse(data);
  j["schema_version"] = 2;
  EXPECT_EQ(code_of([&] { session_from_string(reseal(j)); }), ErrorCode::SchemaVersionMismatch);

  j = parse(data);
  j["nodes"][1]["text"] = "changed";
  EXPECT_EQ(code_of([&] { session_from_string(reseal(j)); }), ErrorCode::CorruptFile);

  j = parse(data);
  j["events"].erase(j["events"].size() - 1);
  EXPECT_EQ(code_of([&] { session_from_string(reseal(j)); }), ErrorCode::CorruptFile);

  j = parse(data);
  ojson reordered = ojson::object();
  reordered["meta"] = j["meta"];
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "meta") reordered[it.key()] = it.value();
  EXPECT_EQ(code_of([&] { session_from_string(reseal(reordered)); }), ErrorCode::CorruptFile);

  j = parse(data);
  j.erase("checksum");
  EXPECT_EQ(code_of([&] { session_from_string(j.dump()); }), ErrorCode::CorruptFile);

  EXPECT_EQ(code_of([] { session_from_string("not json"); }), ErrorCode::CorruptFile);
  EXPECT_EQ(code_of([] { session_from_string("[]"); }), ErrorCode::CorruptFile);
}

TEST(Session, FileSaveAndLoad) {
  testing_support::TempDir dir;
  std::mt19937_64 rng(3);
  const auto t = random_tree(rng, 30);
  const auto path = dir.file("nested/dir/session.json");
  save_session(t, path);
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
  EXPECT_EQ(load_session(path).nodes(), t.nodes());
  EXPECT_EQ(code_of([&] { load_session(dir.file("missing.json")); }), ErrorCode::IoError);
}

TEST(Csv, ParsesQuotedFields) {
  const auto rows = parse_csv("a,\"b,c\",\"say \"\"hi\"\"\"\r\n\"multi\nline\",,x\n\n");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"a", "b,c", "say \"hi\""}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"multi\nline", "", "x"}));
  EXPECT_EQ(code_of([] { parse_csv("\"open"); }), ErrorCode::InvalidArgument);
}

TEST(Csv, ScoresRoundTrip) {
  std::mt19937_64 rng(21);
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<stats::LikertRecord> recs;
    const std::size_t n = rng() % 20;
    for (std::size_t i = 0; i < n; ++i) {
      std::string who = "r" + random_text(rng, 5);
      if (rng() % 3 == 0) who += ",\"quoted\"\n";
      recs.push_back({NodeId{1 + rng() % 1000}, who, int(rng() % 4)});
    }
    ASSERT_EQ(parse_scores_csv(scores_csv(recs)), recs);
  }
}

TEST(Csv, ScoreErrors) {
  EXPECT_TRUE(parse_scores_csv("").empty());
  EXPECT_EQ(parse_scores_csv("3,a,2").size(), 1u);
  EXPECT_EQ(code_of([] { parse_scores_csv("answer_id,annotator_id,score\n3,a,4\n"); }), ErrorCode::ScoreOutOfRange);
  EXPECT_EQ(code_of([] { parse_scores_csv("3,a\n"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_scores_csv("x,a,1\n"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_scores_csv("3,a,1.5\n"); }), ErrorCode::InvalidArgument);
}
