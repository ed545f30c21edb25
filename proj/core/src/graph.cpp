#include "diffcl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>

#include <spdlog/fmt/fmt.h>

#include "diffcl/data_io.hpp"
#include "diffcl/error.hpp"

namespace diffcl {

NormalizedBipartiteGraph build_norm_adjacency(const SparseMatrix& interactions) {
  NormalizedBipartiteGraph g;
  g.user_count = interactions.rows();
  g.item_count = interactions.cols();
  g.user_degree.assign(g.user_count, 0);
  g.item_degree.assign(g.item_count, 0);
  for (const auto& e : interactions.triplets()) {
    ++g.user_degree[e.row];
    ++g.item_degree[e.col];
  }
  for (std::size_t u = 0; u < g.user_count; ++u) {
    if (g.user_degree[u] == 0) throw DataError(fmt::format("user {} has no interactions", u));
  }
  for (std::size_t i = 0; i < g.item_count; ++i) {
    if (g.item_degree[i] == 0) throw DataError(fmt::format("item {} has no interactions", i));
  }

  std::vector<Triplet> entries;
  entries.reserve(2 * interactions.nnz());
  for (const auto& e : interactions.triplets()) {
    const double w = 1.0 / std::sqrt(static_cast<double>(g.user_degree[e.row]) *
                                     static_cast<double>(g.item_degree[e.col]));
    entries.push_back({e.row, g.user_count + e.col, w});
    entries.push_back({g.user_count + e.col, e.row, w});
  }
  const std::size_t n = g.user_count + g.item_count;
  g.adjacency = SparseMatrix::from_triplets(n, n, std::move(entries));
  return g;
}

NormalizedBipartiteGraph build_norm_adjacency(const InteractionDataset& dataset) {
  return build_norm_adjacency(dataset.interaction_matrix());
}

LayerStack propagate(const SparseMatrix& adjacency, const DenseMatrix& initial,
                     std::size_t layers) {
  if (adjacency.cols() != initial.rows()) {
    throw ShapeError(fmt::format("propagate: adjacency {}x{} vs embeddings with {} rows",
                                 adjacency.rows(), adjacency.cols(), initial.rows()));
  }
  LayerStack stack;
  stack.reserve(layers + 1);
  stack.push_back(initial);
  for (std::size_t l = 1; l <= layers; ++l) stack.push_back(spmm(adjacency, stack.back()));
  return stack;
}

DenseMatrix readout(const LayerStack& stack) {
  if (stack.empty()) throw ShapeError("readout: empty layer stack");
  DenseMatrix sum = stack.front();
  for (std::size_t l = 1; l < stack.size(); ++l) add_scaled(sum, stack[l]);
  return sum;
}

DenseMatrix encode(const SparseMatrix& adjacency, const DenseMatrix& initial,
                   std::size_t layers) {
  return readout(propagate(adjacency, initial, layers));
}

DenseMatrix encode_backward(const SparseMatrix& adjacency, const DenseMatrix& grad,
                            std::size_t layers) {
  DenseMatrix total = grad;
  DenseMatrix current = grad;
  for (std::size_t l = 1; l <= layers; ++l) {
    current = spmm_transposed(adjacency, current);
    add_scaled(total, current);
  }
  return total;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double denom = std::sqrt(squared_norm(a)) * std::sqrt(squared_norm(b));
  return dot(a, b) / std::max(denom, 1e-12);
}

ItemItemGraph finish_knn_graph(SparseMatrix neighbor_scores, std::size_t k, bool symmetrize) {
  ItemItemGraph g;
  g.k = k;
  const std::size_t n = neighbor_scores.rows();
  std::vector<Triplet> pattern;
  for (const auto& e : neighbor_scores.triplets()) pattern.push_back({e.row, e.col, 1.0});
  if (symmetrize) {
    const std::size_t forward = pattern.size();
    for (std::size_t k2 = 0; k2 < forward; ++k2) {
      const auto& e = pattern[k2];
      if (!neighbor_scores.contains(e.col, e.row)) pattern.push_back({e.col, e.row, 1.0});
    }
  }
  g.binarized = SparseMatrix::from_triplets(n, n, std::move(pattern));
  g.neighbor_scores = std::move(neighbor_scores);

  g.degree.assign(n, 0.0);
  for (const auto& e : g.binarized.triplets()) g.degree[e.row] += e.weight;

  std::vector<Triplet> normalized;
  normalized.reserve(g.binarized.nnz());
  for (const auto& e : g.binarized.triplets()) {
    normalized.push_back({e.row, e.col, e.weight / std::sqrt(g.degree[e.row] * g.degree[e.col])});
  }
  g.normalized = SparseMatrix::from_triplets(n, n, std::move(normalized));
  return g;
}

ItemItemGraph build_knn_graph(const DenseMatrix& features, const KnnOptions& options) {
  if (features.cols() == 0) throw ShapeError("build_knn_graph: feature dimension is 0");
  const std::size_t n = features.rows();
  const std::size_t keep = n == 0 ? 0 : std::min(options.k, n - 1);

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = std::sqrt(squared_norm(features.row(i)));

  std::vector<Triplet> entries;
  entries.reserve(n * keep);
  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double score =
          dot(features.row(i), features.row(j)) / std::max(norms[i] * norms[j], 1e-12);
      candidates.emplace_back(score, j);
    }
    const auto better = [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    };
    std::partial_sort(candidates.begin(),
                      candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      better);
    for (std::size_t k = 0; k < keep; ++k) {
      entries.push_back({i, candidates[k].second, candidates[k].first});
    }
  }
  return finish_knn_graph(SparseMatrix::from_triplets(n, n, std::move(entries)), options.k,
                          options.symmetrize);
}

DenseMatrix aggregate_ii(const ItemItemGraph& graph, const DenseMatrix& item_embeddings,
                         std::size_t layers) {
  if (item_embeddings.rows() != graph.normalized.rows()) {
    throw ShapeError(fmt::format("aggregate_ii: {} embedding rows for a {}-item graph",
                                 item_embeddings.rows(), graph.normalized.rows()));
  }
  DenseMatrix current = item_embeddings;
  for (std::size_t l = 0; l < layers; ++l) current = spmm(graph.normalized, current);
  return current;
}

DenseMatrix aggregate_ii_backward(const ItemItemGraph& graph, const DenseMatrix& grad,
                                  std::size_t layers) {
  if (grad.rows() != graph.normalized.rows()) {
    throw ShapeError("aggregate_ii_backward: row count mismatch");
  }
  DenseMatrix current = grad;
  for (std::size_t l = 0; l < layers; ++l) current = spmm_transposed(graph.normalized, current);
  return current;
}

namespace {

constexpr char kKnnMagic[8] = {'D', 'C', 'L', 'K', 'N', 'N', '1', '\0'};

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool take(const std::string& in, std::size_t& pos, T& v) {
  if (pos + sizeof(T) > in.size()) return false;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return true;
}

}  // namespace

void save_knn_cache(const std::filesystem::path& path, const ItemItemGraph& graph,
                    bool symmetrize, const std::string& key) {
  std::string out(kKnnMagic, sizeof(kKnnMagic));
  put<std::uint64_t>(out, graph.k);
  put<std::uint64_t>(out, symmetrize ? 1 : 0);
  put<std::uint64_t>(out, key.size());
  out += key;
  put<std::uint64_t>(out, graph.neighbor_scores.rows());
  put<std::uint64_t>(out, graph.neighbor_scores.nnz());
  for (const auto& e : graph.neighbor_scores.triplets()) {
    put<std::uint64_t>(out, e.row);
    put<std::uint64_t>(out, e.col);
    put<double>(out, e.weight);
  }
  write_file(path, out);
}

std::optional<ItemItemGraph> load_knn_cache(const std::filesystem::path& path,
                                            std::size_t k, bool symmetrize,
                                            const std::string& key) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  const std::string in = read_file(path);
  if (in.size() < sizeof(kKnnMagic) || std::memcmp(in.data(), kKnnMagic, sizeof(kKnnMagic))) {
    return std::nullopt;
  }
  std::size_t pos = sizeof(kKnnMagic);
  std::uint64_t stored_k = 0, stored_sym = 0, key_len = 0, n = 0, nnz = 0;
  if (!take(in, pos, stored_k) || !take(in, pos, stored_sym) || !take(in, pos, key_len)) {
    return std::nullopt;
  }
  if (pos + key_len > in.size()) return std::nullopt;
  const std::string stored_key = in.substr(pos, key_len);
  pos += key_len;
  if (stored_k != k || (stored_sym != 0) != symmetrize || stored_key != key) return std::nullopt;
  if (!take(in, pos, n) || !take(in, pos, nnz)) return std::nullopt;
  std::vector<Triplet> entries(nnz);
  for (auto& e : entries) {
    std::uint64_t r = 0, c = 0;
    if (!take(in, pos, r) || !take(in, pos, c) || !take(in, pos, e.weight)) return std::nullopt;
    e.row = r;
    e.col = c;
  }
  return finish_knn_graph(SparseMatrix::from_triplets(n, n, std::move(entries)), k, symmetrize);
}

}  // namespace diffcl
