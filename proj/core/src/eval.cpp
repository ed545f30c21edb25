#include "diffcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "diffcl/error.hpp"

namespace diffcl {

std::vector<std::size_t> rank_topk(std::span<const double> scores,
                                   std::span<const std::size_t> masked, std::size_t k) {
  std::vector<std::size_t> candidates;
  candidates.reserve(scores.size());
  auto m = masked.begin();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    while (m != masked.end() && *m < i) ++m;
    if (m != masked.end() && *m == i) continue;
    candidates.push_back(i);
  }
  if (k > candidates.size()) {
    spdlog::warn("top-{} requested but only {} candidates; clamping", k, candidates.size());
    k = candidates.size();
  }
  const auto better = [&scores](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                    candidates.end(), better);
  candidates.resize(k);
  return candidates;
}

namespace {

bool contains(std::span<const std::size_t> sorted, std::size_t v) {
  return std::binary_search(sorted.begin(), sorted.end(), v);
}

std::vector<std::size_t> sorted_copy(std::span<const std::size_t> v) {
  std::vector<std::size_t> out(v.begin(), v.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

double recall_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> truth,
                   std::size_t k) {
  if (truth.empty() || k == 0) return 0.0;
  const auto t = sorted_copy(truth);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += contains(t, ranked[r]);
  return static_cast<double>(hits) / static_cast<double>(t.size());
}

double ndcg_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> truth,
                 std::size_t k) {
  if (truth.empty() || k == 0) return 0.0;
  const auto t = sorted_copy(truth);
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (contains(t, ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, t.size()); ++r) {
    ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / ideal;
}

double RankingResult::recall_at(std::size_t k) const {
  for (std::size_t j = 0; j < ks.size(); ++j) {
    if (ks[j] == k) return recall[j];
  }
  throw std::out_of_range("recall@" + std::to_string(k) + " not evaluated");
}

double RankingResult::ndcg_at(std::size_t k) const {
  for (std::size_t j = 0; j < ks.size(); ++j) {
    if (ks[j] == k) return ndcg[j];
  }
  throw std::out_of_range("ndcg@" + std::to_string(k) + " not evaluated");
}

RankingResult evaluate(const DenseMatrix& scores,
                       const std::vector<std::vector<std::size_t>>& masked,
                       const std::vector<std::vector<std::size_t>>& truth,
                       std::span<const std::size_t> ks) {
  if (masked.size() != scores.rows() || truth.size() != scores.rows()) {
    throw ShapeError("evaluate: masked/truth lists must have one entry per user");
  }
  if (ks.empty()) throw ConfigError("evaluate: no cutoffs");
  RankingResult out;
  out.ks.assign(ks.begin(), ks.end());
  out.user_recall.resize(ks.size());
  out.user_ndcg.resize(ks.size());
  out.recall.assign(ks.size(), 0.0);
  out.ndcg.assign(ks.size(), 0.0);
  const std::size_t k_max = *std::max_element(ks.begin(), ks.end());

  for (std::size_t u = 0; u < scores.rows(); ++u) {
    if (truth[u].empty()) continue;
    out.users.push_back(u);
    const auto m = sorted_copy(masked[u]);
    const std::size_t available = scores.cols() - m.size();
    const auto ranked = rank_topk(scores.row(u), m, std::min(k_max, available));
    for (std::size_t j = 0; j < ks.size(); ++j) {
      out.user_recall[j].push_back(recall_at_k(ranked, truth[u], ks[j]));
      out.user_ndcg[j].push_back(ndcg_at_k(ranked, truth[u], ks[j]));
    }
  }
  if (!out.users.empty()) {
    const double n = static_cast<double>(out.users.size());
    for (std::size_t j = 0; j < ks.size(); ++j) {
      for (double v : out.user_recall[j]) out.recall[j] += v;
      for (double v : out.user_ndcg[j]) out.ndcg[j] += v;
      out.recall[j] /= n;
      out.ndcg[j] /= n;
    }
  }
  return out;
}

}  // namespace diffcl
