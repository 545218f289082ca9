#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>
#include <vector>

#include "sessrnn/baselines.hpp"
#include "sessrnn/evaluator.hpp"
#include "synthetic.hpp"

using namespace sessrnn;

namespace {

SessionStore store_of(const std::vector<std::vector<ItemIndex>>& lists) {
  std::vector<Session> out;
  std::int64_t t = 0;
  for (std::size_t s = 0; s < lists.size(); ++s) {
    Session x;
    x.id = "s" + std::to_string(s);
    x.items = lists[s];
    for (std::size_t k = 0; k < lists[s].size(); ++k) x.times.push_back(t++);
    out.push_back(std::move(x));
  }
  return SessionStore(std::move(out));
}

// Scores the item following the last observed one on a fixed successor table.
class TableScorer : public SessionScorer {
 public:
  TableScorer(std::size_t n, std::vector<std::vector<double>> rows) : n_(n), rows_(std::move(rows)) {}
  std::size_t n_items() const override { return n_; }
  void reset() override {}
  void observe(ItemIndex item) override { last_ = item; }
  void scores(std::vector<double>& out) override { out = rows_[last_]; }

 private:
  std::size_t n_;
  std::vector<std::vector<double>> rows_;
  ItemIndex last_ = 0;
};

// Knows the test sessions and always puts the true next item first.
class OracleScorer : public SessionScorer {
 public:
  OracleScorer(std::size_t n, const SessionStore& st) : n_(n), st_(&st) {}
  std::size_t n_items() const override { return n_; }
  void reset() override {
    ++session_;
    pos_ = 0;
  }
  void observe(ItemIndex) override { ++pos_; }
  void scores(std::vector<double>& out) override {
    out.assign(n_, 0.0);
    out[st_->sessions()[session_ - 1].items[pos_]] = 1.0;
  }

 private:
  std::size_t n_;
  const SessionStore* st_;
  std::size_t session_ = 0, pos_ = 0;
};

std::size_t sort_rank(const std::vector<double>& s, ItemIndex target) {
  // Pessimistic: among equal scores the target is placed last.
  std::vector<ItemIndex> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](ItemIndex a, ItemIndex b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return a != target && b == target;
  });
  return static_cast<std::size_t>(std::find(idx.begin(), idx.end(), target) - idx.begin()) + 1;
}

}  // namespace

TEST(RankOf, EdgeCases) {
  EXPECT_EQ(rank_of(std::vector<double>{5.0, 1.0, 0.0}, 0), 1u);
  EXPECT_EQ(rank_of(std::vector<double>{0.0, 1.0, 5.0}, 0), 3u);
  EXPECT_EQ(rank_of(std::vector<double>{2.0, 2.0, 2.0, 2.0}, 1), 4u);  // ties count against
  EXPECT_EQ(rank_of(std::vector<double>{3.0}, 0), 1u);
  EXPECT_THROW(rank_of(std::vector<double>{1.0}, 1), std::out_of_range);
}

TEST(RankOf, MatchesSortOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.index(40);
    std::vector<double> s(n);
    for (auto& v : s) v = static_cast<double>(rng.index(6));  // many ties
    const ItemIndex t = rng.index(n);
    ASSERT_EQ(rank_of(s, t), sort_rank(s, t));
  }
}

TEST(RankAmong, RestrictsToCandidates) {
  std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  std::vector<ItemIndex> cand{1, 3};
  EXPECT_EQ(rank_among(s, 2, cand), 2u);
  EXPECT_EQ(rank_among(s, 3, cand), 2u);  // target already a candidate
  EXPECT_EQ(rank_among(s, 0, cand), 1u);
}

TEST(MostPopular, TiesByIndex) {
  EXPECT_EQ(most_popular({3, 5, 5, 1}, 2), (std::vector<ItemIndex>{1, 2}));
  EXPECT_EQ(most_popular({3, 5, 5, 1}, 10).size(), 4u);
}

TEST(Evaluate, PerfectScorerScoresOne) {
  auto ds = ingest_events(synthetic::random_events(30, 12, 2, 6, 9));
  OracleScorer sc(ds.vocab.size(), ds.store);
  auto rep = evaluate(sc, ds.store, {5, {}});
  EXPECT_EQ(rep.n_cases, ds.store.n_pairs());
  EXPECT_DOUBLE_EQ(rep.recall_at_k, 1.0);
  EXPECT_DOUBLE_EQ(rep.mrr_at_k, 1.0);
}

TEST(Evaluate, HandComputedMetrics) {
  // Items 0..3. Successor table: after 0 ranks [1, 2, 3, 0], after 1 ranks [2, 0, 1, 3] ...
  std::vector<std::vector<double>> rows{
      {0.0, 3.0, 2.0, 1.0},  // after 0: 1 (rank 1), 2 (rank 2), 3 (rank 3), 0 (rank 4)
      {2.0, 1.0, 3.0, 0.0},  // after 1: 2 first, 0 second, 1 third, 3 fourth
      {1.0, 1.0, 1.0, 1.0},  // after 2: all tied, everything rank 4
      {0.0, 0.0, 0.0, 1.0},
  };
  TableScorer sc(4, rows);
  // pairs: (0->1) rank1, (1->0) rank2, (0->2) rank2, (2->3) rank4, (1->2) rank1
  auto st = store_of({{0, 1, 0}, {0, 2, 3}, {1, 2}});
  auto rep = evaluate(sc, st, {2, {}});
  EXPECT_EQ(rep.n_cases, 5u);
  EXPECT_DOUBLE_EQ(rep.recall_at_k, 4.0 / 5.0);
  EXPECT_DOUBLE_EQ(rep.mrr_at_k, (1.0 + 0.5 + 0.5 + 0.0 + 1.0) / 5.0);
  ASSERT_EQ(rep.by_position.size(), 2u);
  EXPECT_EQ(rep.by_position[0].cases, 3u);
  EXPECT_EQ(rep.by_position[1].cases, 2u);
  EXPECT_DOUBLE_EQ(rep.recall_at_position(1), 0.5);
  TableScorer sc1(4, rows);
  auto k1 = evaluate(sc1, st, {1, {}});
  EXPECT_DOUBLE_EQ(k1.recall_at_k, 2.0 / 5.0);
  EXPECT_DOUBLE_EQ(k1.recall_at_k, k1.mrr_at_k);
}

TEST(Evaluate, MonotoneInCutoffAndRecallEqualsMrrAtOne) {
  auto ds = ingest_events(synthetic::random_events(80, 20, 2, 7, 5));
  auto knn = ItemKnnModel::train(ds.store, ds.vocab.size());
  double prev_r = 0.0, prev_m = 0.0;
  for (std::size_t k : {1u, 2u, 5u, 10u, 20u}) {
    ItemKnnScorer sc(knn);
    auto rep = evaluate(sc, ds.store, {k, {}});
    EXPECT_GE(rep.recall_at_k, prev_r);
    EXPECT_GE(rep.mrr_at_k, prev_m);
    EXPECT_LE(rep.mrr_at_k, rep.recall_at_k);
    if (k == 1) {
      EXPECT_DOUBLE_EQ(rep.recall_at_k, rep.mrr_at_k);
    }
    prev_r = rep.recall_at_k;
    prev_m = rep.mrr_at_k;
  }
}

TEST(Evaluate, FullPrefilterEqualsUnfiltered) {
  auto ds = ingest_events(synthetic::random_events(60, 15, 2, 6, 6));
  auto pop = ds.vocab.popularity();
  SPopScorer a(pop), b(pop);
  auto plain = evaluate(a, ds.store, {5, {}});
  auto filtered = evaluate(b, ds.store, {5, ds.vocab.size()}, &pop);
  EXPECT_EQ(plain.recall_at_k, filtered.recall_at_k);
  EXPECT_EQ(plain.mrr_at_k, filtered.mrr_at_k);
  SPopScorer c(pop);
  auto narrow = evaluate(c, ds.store, {5, 3}, &pop);
  EXPECT_GE(narrow.recall_at_k, plain.recall_at_k);
  SPopScorer d(pop);
  EXPECT_THROW(evaluate(d, ds.store, {5, 3}), std::invalid_argument);
}

TEST(Evaluate, EmptyTestSetIsUndefined) {
  PopScorer sc({1, 2});
  auto rep = evaluate(sc, SessionStore{}, {});
  EXPECT_FALSE(rep.defined());
  EXPECT_NE(rep.to_line().find("undefined"), std::string::npos);
  std::ostringstream os;
  write_report_table(os, {{"POP", rep}});
  EXPECT_NE(os.str().find("n/a"), std::string::npos);
}

TEST(Evaluate, ZeroCutoffRejected) {
  PopScorer sc({1, 2});
  EXPECT_THROW(evaluate(sc, SessionStore{}, {0, {}}), std::invalid_argument);
}
