// Independent reference implementations used by the unit and acceptance tests.
// They deliberately avoid the library's sparse kernels and ranking helpers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <vector>

#include "diffcl/matrix.hpp"
#include "diffcl/rng.hpp"

namespace diffcl::oracle {

using Dense = std::vector<std::vector<double>>;

inline Dense to_nested(const DenseMatrix& m) {
  Dense out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline Dense multiply(const Dense& a, const Dense& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Dense c(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i][t] * b[t][j];
      c[i][j] = s;
    }
  return c;
}

// Dense symmetric-normalized bipartite adjacency from a user x item 0/1 matrix.
inline Dense bipartite_adjacency(const Dense& r) {
  const std::size_t users = r.size(), items = r.empty() ? 0 : r[0].size();
  std::vector<double> du(users, 0.0), di(items, 0.0);
  for (std::size_t u = 0; u < users; ++u)
    for (std::size_t i = 0; i < items; ++i) {
      du[u] += r[u][i];
      di[i] += r[u][i];
    }
  Dense a(users + items, std::vector<double>(users + items, 0.0));
  for (std::size_t u = 0; u < users; ++u)
    for (std::size_t i = 0; i < items; ++i)
      if (r[u][i] != 0.0) {
        const double w = 1.0 / std::sqrt(du[u] * di[i]);
        a[u][users + i] = w;
        a[users + i][u] = w;
      }
  return a;
}

// A^l E0 for a dense A.
inline Dense power_apply(const Dense& a, const Dense& e0, std::size_t layers) {
  Dense cur = e0;
  for (std::size_t l = 0; l < layers; ++l) cur = multiply(a, cur);
  return cur;
}

// Top-K cosine neighbours by full sort, ties broken by lower index, then
// D^-1/2 S D^-1/2 over the binarized (optionally max-symmetrized) pattern.
inline Dense knn_normalized(const Dense& features, std::size_t k, bool symmetrize) {
  const std::size_t n = features.size();
  Dense s(n, std::vector<double>(n, 0.0));
  const auto cosine = [&](std::size_t i, std::size_t j) {
    double d = 0, ni = 0, nj = 0;
    for (std::size_t c = 0; c < features[i].size(); ++c) {
      d += features[i][c] * features[j][c];
      ni += features[i][c] * features[i][c];
      nj += features[j][c] * features[j][c];
    }
    return d / std::max(std::sqrt(ni) * std::sqrt(nj), 1e-12);
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) all.push_back({-cosine(i, j), j});
    std::sort(all.begin(), all.end());
    for (std::size_t t = 0; t < std::min(k, all.size()); ++t) s[i][all[t].second] = 1.0;
  }
  if (symmetrize)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) s[i][j] = std::max(s[i][j], s[j][i]);
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += s[i][j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (s[i][j] != 0.0) s[i][j] /= std::sqrt(deg[i] * deg[j]);
  return s;
}

struct Metrics {
  double recall = 0.0;
  double ndcg = 0.0;
};

// Full stable sort of unmasked items by descending score, then direct formulas.
inline Metrics brute_metrics(const std::vector<double>& scores,
                             const std::vector<std::size_t>& masked,
                             const std::vector<std::size_t>& truth, std::size_t k) {
  const std::set<std::size_t> mask(masked.begin(), masked.end());
  const std::set<std::size_t> relevant(truth.begin(), truth.end());
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!mask.count(i)) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t top = std::min(k, order.size());
  Metrics m;
  if (relevant.empty()) return m;
  double hits = 0, dcg = 0, idcg = 0;
  for (std::size_t r = 0; r < top; ++r)
    if (relevant.count(order[r])) {
      hits += 1;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r)
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  m.recall = hits / static_cast<double>(relevant.size());
  m.ndcg = idcg > 0 ? dcg / idcg : 0.0;
  return m;
}

// Random connected-ish bipartite 0/1 matrix with every row and column nonempty.
inline Dense random_interactions(std::size_t users, std::size_t items, double density, Rng& rng) {
  Dense r(users, std::vector<double>(items, 0.0));
  for (std::size_t u = 0; u < users; ++u)
    for (std::size_t i = 0; i < items; ++i)
      if (rng.uniform() < density) r[u][i] = 1.0;
  for (std::size_t u = 0; u < users; ++u) r[u][rng.uniform_index(items)] = 1.0;
  for (std::size_t i = 0; i < items; ++i) r[rng.uniform_index(users)][i] = 1.0;
  return r;
}

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  DenseMatrix m(rows, cols);
  for (auto& v : m.values()) v = rng.normal();
  return m;
}

}  // namespace diffcl::oracle
