#include <cmath>

#include <gtest/gtest.h>

#include "diffcl/eval.hpp"
#include "oracles.hpp"

namespace diffcl {
namespace {

using Ids = std::vector<std::size_t>;

TEST(RankTest, SortMaskAndTies) {
  const std::vector<double> s{0.9, 0.1, 0.5};
  EXPECT_EQ(rank_topk(s, {}, 2), (Ids{0, 2}));
  const Ids masked{0};
  EXPECT_EQ(rank_topk(s, masked, 2), (Ids{2, 1}));
  const std::vector<double> flat(5, 1.0);
  EXPECT_EQ(rank_topk(flat, {}, 3), (Ids{0, 1, 2}));
}

TEST(RankTest, KClamped) {
  const std::vector<double> s{0.1, 0.2};
  const Ids masked{1};
  EXPECT_EQ(rank_topk(s, masked, 10), (Ids{0}));
}

TEST(RecallTest, HandValues) {
  const Ids ranked{3, 0, 5};
  EXPECT_DOUBLE_EQ(recall_at_k(ranked, Ids{3}, 3), 1.0);
  EXPECT_DOUBLE_EQ(recall_at_k(Ids{1, 4}, Ids{1, 2}, 2), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k(ranked, Ids{}, 3), 0.0);
}

TEST(NdcgTest, HandValues) {
  EXPECT_DOUBLE_EQ(ndcg_at_k(Ids{7, 1}, Ids{7}, 2), 1.0);
  EXPECT_NEAR(ndcg_at_k(Ids{1, 7}, Ids{7}, 2), 1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(ndcg_at_k(Ids{1, 7}, Ids{7}, 2), 0.6309, 5e-5);
  EXPECT_DOUBLE_EQ(ndcg_at_k(Ids{1, 2}, Ids{7}, 2), 0.0);
}

TEST(EvaluateTest, PerfectScoresGiveFullRecall) {
  const std::size_t users = 4, items = 9;
  DenseMatrix scores(users, items);
  std::vector<Ids> truth(users), masked(users);
  for (std::size_t u = 0; u < users; ++u) {
    truth[u] = {u, u + 4};
    masked[u] = {8};
    scores(u, u) = scores(u, u + 4) = 1e300;
  }
  const Ids ks{2, 5};
  const auto r = evaluate(scores, masked, truth, ks);
  EXPECT_DOUBLE_EQ(r.recall_at(2), 1.0);
  EXPECT_DOUBLE_EQ(r.recall_at(5), 1.0);
  EXPECT_DOUBLE_EQ(r.ndcg_at(2), 1.0);
}

TEST(EvaluateTest, UsersWithoutTruthExcluded) {
  DenseMatrix scores{{1, 0}, {0, 1}};
  const std::vector<Ids> truth{{0}, {}};
  const std::vector<Ids> masked{{}, {}};
  const Ids ks{1};
  const auto r = evaluate(scores, masked, truth, ks);
  EXPECT_EQ(r.users, (Ids{0}));
  EXPECT_DOUBLE_EQ(r.recall_at(1), 1.0);
}

TEST(EvaluateTest, MatchesBruteForceOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t users = 5, items = 6;
    DenseMatrix scores(users, items);
    // Coarse values force ties.
    for (double& v : scores.values()) v = static_cast<double>(rng.uniform_index(4));
    std::vector<Ids> truth(users), masked(users);
    for (std::size_t u = 0; u < users; ++u)
      for (std::size_t i = 0; i < items; ++i) {
        const double x = rng.uniform();
        if (x < 0.25) masked[u].push_back(i);
        else if (x < 0.5) truth[u].push_back(i);
      }
    const Ids ks{1, 3, 10};
    const auto r = evaluate(scores, masked, truth, ks);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      double rec = 0, nd = 0;
      std::size_t counted = 0;
      for (std::size_t u = 0; u < users; ++u) {
        if (truth[u].empty()) continue;
        ++counted;
        const std::vector<double> row(scores.row(u).begin(), scores.row(u).end());
        const auto m = oracle::brute_metrics(row, masked[u], truth[u], ks[j]);
        rec += m.recall;
        nd += m.ndcg;
      }
      if (counted == 0) continue;
      EXPECT_EQ(r.recall[j], rec / counted);
      EXPECT_EQ(r.ndcg[j], nd / counted);
    }
  }
}

TEST(EvaluateTest, RandomScoresNearHypergeometricExpectation) {
  // 200 users, 100 items, 10 test items per user, nothing masked.
  const std::size_t users = 200, items = 100, k = 10;
  double mean = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    DenseMatrix scores(users, items);
    for (double& v : scores.values()) v = rng.uniform();
    std::vector<Ids> truth(users), masked(users);
    for (std::size_t u = 0; u < users; ++u)
      for (std::size_t i = 0; i < 10; ++i) truth[u].push_back((u + 7 * i) % items);
    const Ids ks{k};
    mean += evaluate(scores, masked, truth, ks).recall_at(k) / seeds;
  }
  const double expected = static_cast<double>(k) / items;
  // Per-user recall variance from the hypergeometric draw, averaged over 4000 users.
  const double var = expected * (1 - expected) * (items - 10.0) / (items - 1.0) / 10.0;
  EXPECT_LE(std::abs(mean - expected), 3 * std::sqrt(var / (users * seeds)));
}

}  // namespace
}  // namespace diffcl
