#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "diffcl/matrix.hpp"

namespace diffcl {

/// Indices of the k highest scores, skipping `masked` (sorted). Ties go to
/// the lower index. k is clamped, with a warning, to the number of
/// unmasked candidates.
std::vector<std::size_t> rank_topk(std::span<const double> scores,
                                   std::span<const std::size_t> masked, std::size_t k);

/// |top-k ∩ truth| / |truth|; 0 for empty truth.
double recall_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> truth,
                   std::size_t k);
/// DCG with binary gains 1/log2(rank + 1) over the ideal DCG of
/// min(k, |truth|) hits; 0 for empty truth.
double ndcg_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> truth,
                 std::size_t k);

struct RankingResult {
  std::vector<std::size_t> ks;
  // Users with a nonempty truth list, ascending.
  std::vector<std::size_t> users;
  // Per k: per evaluated user.
  std::vector<std::vector<double>> user_recall;
  std::vector<std::vector<double>> user_ndcg;
  // Per k: macro average over evaluated users.
  std::vector<double> recall;
  std::vector<double> ndcg;

  /// Throws std::out_of_range if k was not evaluated.
  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

/// Ranks every user's row of `scores` (|U| x |I|) with their `masked`
/// items excluded and averages the metrics over users with nonempty
/// `truth`.
RankingResult evaluate(const DenseMatrix& scores,
                       const std::vector<std::vector<std::size_t>>& masked,
                       const std::vector<std::vector<std::size_t>>& truth,
                       std::span<const std::size_t> ks);

}  // namespace diffcl
