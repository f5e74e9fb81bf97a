#include <gtest/gtest.h>

#include <set>
#include <tuple>

#include "carto/stats.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace carto;
using namespace carto::stats;
using testing_support::code_of;
using testing_support::make_tree;
using namespace testing_support;

namespace {

std::vector<double> normal_sample(std::mt19937_64& rng, std::size_t n, double mu, double sigma) {
  std::normal_distribution<double> d(mu, sigma);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

ScoreMatrix full_matrix(const std::vector<std::vector<double>>& x) {
  ScoreMatrix m;
  for (std::size_t i = 0; i < x.size(); ++i) m.subjects.push_back("s" + std::to_string(i));
  for (std::size_t j = 0; j < x[0].size(); ++j) m.raters.push_back("r" + std::to_string(j));
  for (const auto& row : x) m.cells.emplace_back(row.begin(), row.end());
  return m;
}

}  // namespace

TEST(Welch, MatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(101);
  for (int inst = 0; inst < 200; ++inst) {
    const auto x = normal_sample(rng, 4 + rng() % 12, 0.0, 0.5 + (rng() % 100) / 40.0);
    const auto y = normal_sample(rng, 4 + rng() % 12, (rng() % 100) / 50.0, 0.5 + (rng() % 100) / 40.0);
    const auto got = welch_t_test(x, y);
    const auto want = oracle::welch(x, y);
    ASSERT_NEAR(got.t, want.t, 1e-9 * std::max(1.0, std::fabs(want.t))) << inst;
    ASSERT_NEAR(got.df, want.df, 1e-9 * want.df) << inst;
    ASSERT_NEAR(got.p, want.p, 1e-6) << inst;
    ASSERT_NEAR(cohens_d(x, y), oracle::cohens_d(x, y), 1e-9) << inst;
  }
}

TEST(Welch, DegenerateConventions) {
  const auto same = welch_t_test({2, 2, 2}, {2, 2});
  EXPECT_EQ(same.t, 0.0);
  EXPECT_EQ(same.p, 1.0);
  EXPECT_EQ(same.df, 3.0);
  const auto apart = welch_t_test({3, 3}, {1, 1, 1});
  EXPECT_TRUE(std::isinf(apart.t) && apart.t > 0);
  EXPECT_EQ(apart.p, 0.0);
  EXPECT_TRUE(std::isinf(welch_t_test({1, 1}, {3, 3}).t));
  EXPECT_EQ(code_of([] { welch_t_test({1}, {1, 2}); }), ErrorCode::TooFewSamples);
  EXPECT_EQ(code_of([] { cohens_d({1, 1}, {1, 1}); }), ErrorCode::ZeroVariance);
  EXPECT_EQ(code_of([] { cohens_d({1}, {2}); }), ErrorCode::TooFewSamples);
}

TEST(Welch, KnownValue) {
  // hand computation: means 3 and 6, variances 2.5 and 2.5, n = 5 each
  const auto r = welch_t_test({1, 2, 3, 4, 5}, {4, 5, 6, 7, 8});
  EXPECT_NEAR(r.t, -3.0, 1e-12);
  EXPECT_NEAR(r.df, 8.0, 1e-12);
  EXPECT_NEAR(r.p, 0.017071681233782634, 1e-9);
  EXPECT_NEAR(cohens_d({1, 2, 3, 4, 5}, {4, 5, 6, 7, 8}), -3.0 / std::sqrt(2.5), 1e-12);
}

TEST(Kappa, MatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(7);
  int checked = 0;
  for (int inst = 0; inst < 300; ++inst) {
    const std::size_t n = 2 + rng() % 30;
    const int labels = 1 + int(rng() % 3);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = int(rng() % labels);
      b[i] = rng() % 3 == 0 ? int(rng() % labels) : a[i];
    }
    const auto want = oracle::kappa(a, b);
    if (!want) {
      ASSERT_EQ(code_of([&] { cohens_kappa(a, b); }), ErrorCode::DegenerateMarginals);
      continue;
    }
    ASSERT_NEAR(cohens_kappa(a, b), *want, 1e-9) << inst;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Kappa, Examples) {
  EXPECT_NEAR(cohens_kappa<bool>({true, true, false, false}, {true, false, false, false}), 0.5, 1e-12);
  EXPECT_NEAR(cohens_kappa<bool>({true, false}, {false, true}), -1.0, 1e-12);
  EXPECT_EQ(code_of([] { cohens_kappa<int>({1, 1}, {1, 1}); }), ErrorCode::DegenerateMarginals);
  EXPECT_EQ(code_of([] { cohens_kappa<int>({1}, {1, 2}); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([] { cohens_kappa<int>({}, {}); }), ErrorCode::TooFewSamples);
}

TEST(Stars, Thresholds) {
  EXPECT_EQ(significance_stars(0.00001), "****");
  EXPECT_EQ(significance_stars(0.0005), "***");
  EXPECT_EQ(significance_stars(0.005), "**");
  EXPECT_EQ(significance_stars(0.04), "*");
  EXPECT_EQ(significance_stars(0.05), "ns");
}

TEST(Icc, ClassicSixByFourData) {
  // six targets rated by four judges; published single-rater coefficients
  const std::vector<std::vector<double>> x{{9, 2, 5, 8}, {6, 1, 3, 2}, {8, 4, 6, 8},
                                           {7, 1, 2, 6}, {10, 5, 6, 9}, {6, 2, 4, 7}};
  EXPECT_NEAR(icc(full_matrix(x), IccVariant::OneWay).value, 0.17, 0.005);
  EXPECT_NEAR(icc(full_matrix(x), IccVariant::TwoWayAbsolute).value, 0.29, 0.005);
  EXPECT_NEAR(icc(full_matrix(x), IccVariant::TwoWayConsistency).value, 0.71, 0.005);
}

TEST(Icc, MatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(55);
  int checked = 0;
  for (int inst = 0; inst < 300; ++inst) {
    const std::size_t n = 2 + rng() % 10, k = 2 + rng() % 5;
    std::vector<std::vector<double>> x(n, std::vector<double>(k));
    const bool likert = inst % 2 == 0;
    for (auto& row : x)
      for (auto& v : row) v = likert ? double(rng() % 4) : std::normal_distribution<double>(0, 1)(rng);
    if (oracle::anova(x).msr <= 1e-12) {
      ASSERT_EQ(code_of([&] { icc(full_matrix(x)); }), ErrorCode::InsufficientData);
      continue;
    }
    const auto m = full_matrix(x);
    ASSERT_NEAR(icc(m, IccVariant::OneWay).value, oracle::icc1(x), 1e-9) << inst;
    ASSERT_NEAR(icc(m, IccVariant::TwoWayAbsolute).value, oracle::icc2(x), 1e-9) << inst;
    ASSERT_NEAR(icc(m, IccVariant::TwoWayConsistency).value, oracle::icc3(x), 1e-9) << inst;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Icc, DropsRaterWithMostMissingCells) {
  std::vector<std::vector<double>> x{{1, 2, 1, 0}, {3, 3, 2, 1}, {0, 1, 0, 2}, {2, 3, 3, 3}, {1, 0, 1, 2}};
  auto m = full_matrix(x);
  m.cells[1][3] = m.cells[2][3] = m.cells[3][3] = std::nullopt;
  m.cells[0][0] = std::nullopt;
  const auto r = icc(m);
  EXPECT_EQ(r.raters_used, 3u);
  EXPECT_EQ(r.subjects_used, 4u);
  EXPECT_EQ(r.dropped_raters, std::vector<std::string>{"r3"});
  EXPECT_EQ(r.dropped_subjects, std::vector<std::string>{"s0"});
  const std::vector<std::vector<double>> kept{{3, 3, 2}, {0, 1, 0}, {2, 3, 3}, {1, 0, 1}};
  EXPECT_NEAR(r.value, oracle::icc2(kept), 1e-12);
}

TEST(Icc, InsufficientData) {
  EXPECT_EQ(code_of([] { icc(full_matrix({{1, 2}})); }), ErrorCode::InsufficientData);
  EXPECT_EQ(code_of([] { icc(full_matrix({{1}, {2}})); }), ErrorCode::InsufficientData);
  EXPECT_EQ(code_of([] { icc(full_matrix({{1, 2}, {1, 2}})); }), ErrorCode::InsufficientData);
  auto m = full_matrix({{1, 2}, {2, 3}, {0, 1}});
  m.cells[0][0] = m.cells[1][1] = std::nullopt;
  EXPECT_EQ(code_of([&] { icc(m); }), ErrorCode::InsufficientData);
  EXPECT_EQ(parse_icc_variant("icc3"), IccVariant::TwoWayConsistency);
  EXPECT_EQ(code_of([] { parse_icc_variant("icc9"); }), ErrorCode::InvalidArgument);
}

TEST(ScoreMatrix, BuildsFromRecordsAndRejectsDuplicates) {
  const std::vector<LikertRecord> recs{{NodeId{2}, "b", 1}, {NodeId{1}, "a", 3}, {NodeId{2}, "a", 2}};
  const auto m = score_matrix(recs);
  EXPECT_EQ(m.raters, (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(m.cells.size(), 2u);
  EXPECT_EQ(m.cells[0][0], 3.0);
  EXPECT_FALSE(m.cells[0][1]);
  EXPECT_EQ(m.cells[1][1], 1.0);
  auto dup = recs;
  dup.push_back({NodeId{1}, "a", 0});
  EXPECT_EQ(code_of([&] { score_matrix(dup); }), ErrorCode::InvalidArgument);
}

TEST(PreferencePairs, MatchAllPairsOracle) {
  std::mt19937_64 rng(2024);
  std::size_t total_score_pairs = 0;
  for (int inst = 0; inst < 150; ++inst) {
    auto s = random_scored_session(rng);
    const auto pairs = derive_preference_pairs(s.tree, s.records, {0.05});
    std::set<PairKey> got;
    for (const auto& p : pairs) {
      ASSERT_TRUE(got.insert({p.question.value, p.chosen.value, p.rejected.value, int(p.reason)}).second);
      if (p.reason == PairReason::HumanOverModel) {
        EXPECT_EQ(p.chosen_provenance, Author::Human);
        EXPECT_TRUE(oracle_human_provenance(s.tree, p.chosen));
        EXPECT_EQ(p.rejected_provenance, Author::Model);
      } else {
        ++total_score_pairs;
        ASSERT_TRUE(p.p);
        EXPECT_LT(*p.p, 0.05);
      }
      EXPECT_EQ(p.prompt, s.tree.node(p.question).text);
      EXPECT_EQ(p.chosen_text, s.tree.node(p.chosen).text);
    }
    ASSERT_EQ(got, oracle_pairs(s.tree, s.records, 0.05)) << inst;
  }
  EXPECT_GT(total_score_pairs, 0u);
}

TEST(Filter, NeverEmptiesAndMatchesOracle) {
  std::mt19937_64 rng(99);
  for (int inst = 0; inst < 300; ++inst) {
    const auto set = random_answer_set(rng);
    const auto r = filter_significant_answers(set);
    ASSERT_FALSE(r.retained.empty());
    ASSERT_EQ(r.retained.size() + r.dropped.size(), set.size());
    std::set<std::uint64_t> got;
    for (auto id : r.dropped) got.insert(id.value);
    ASSERT_EQ(got, oracle_dropped(set, 0.05)) << inst;
  }
}

TEST(Filter, RetainedModelAnswersSkipsHumanAndUnscored) {
  auto t = make_tree();
  auto q = t.add_node(t.root(), NodeKind::Question, "q", Author::Human);
  auto good = t.add_node(q, NodeKind::Answer, "good", Author::Model);
  auto bad = t.add_node(q, NodeKind::Answer, "bad", Author::Model);
  auto unscored = t.add_node(q, NodeKind::Answer, "unscored", Author::Model);
  auto human = t.add_node(q, NodeKind::Answer, "human", Author::Human);
  for (int r = 0; r < 4; ++r) {
    t.score_node(good, 3, "r" + std::to_string(r));
    t.score_node(bad, r % 2, "r" + std::to_string(r));
    t.score_node(human, 0, "r" + std::to_string(r));
  }
  (void)unscored;
  EXPECT_EQ(retained_model_answers(t, likert_records(t)), std::vector<NodeId>{good});
}
