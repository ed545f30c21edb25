#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diffcl/dataset.hpp"
#include "diffcl/matrix.hpp"

namespace diffcl {

/// Symmetric-normalized user-item adjacency over (|U| + |I|) nodes. Users
/// occupy rows [0, |U|), items rows [|U|, |U| + |I|). Edge (u, i) carries
/// 1 / sqrt(deg_u * deg_i) in both off-diagonal blocks.
struct NormalizedBipartiteGraph {
  std::size_t user_count = 0;
  std::size_t item_count = 0;
  SparseMatrix adjacency;
  std::vector<std::size_t> user_degree;
  std::vector<std::size_t> item_degree;
};

/// Throws DataError naming the first user or item of degree zero.
NormalizedBipartiteGraph build_norm_adjacency(const SparseMatrix& interactions);
NormalizedBipartiteGraph build_norm_adjacency(const InteractionDataset& dataset);

/// Layer outputs E^(0..L); E^(l) = A * E^(l-1).
using LayerStack = std::vector<DenseMatrix>;

LayerStack propagate(const SparseMatrix& adjacency, const DenseMatrix& initial,
                     std::size_t layers);
/// Elementwise sum over all layers, layer 0 included.
DenseMatrix readout(const LayerStack& stack);
/// readout(propagate(...)).
DenseMatrix encode(const SparseMatrix& adjacency, const DenseMatrix& initial,
                   std::size_t layers);
/// Vector-Jacobian product of encode: sum_l (A^T)^l * grad.
DenseMatrix encode_backward(const SparseMatrix& adjacency, const DenseMatrix& grad,
                            std::size_t layers);

struct KnnOptions {
  std::size_t k = 10;
  // Replace the top-K pattern S by max(S, S^T) before normalizing.
  bool symmetrize = false;
};

/// Modality-specific item-item graph.
struct ItemItemGraph {
  std::size_t k = 0;
  // Raw cosine scores of the kept neighbours (pattern = top-K).
  SparseMatrix neighbor_scores;
  // 0/1 top-K pattern (after optional symmetrization).
  SparseMatrix binarized;
  // Row sums of `binarized`.
  std::vector<double> degree;
  // D^{-1/2} S D^{-1/2}.
  SparseMatrix normalized;
};

/// Cosine similarity of two vectors, dot / max(|a| |b|, 1e-12).
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Builds the K-nearest-neighbour graph from item features. For each row
/// the min(K, |I| - 1) highest cosine scores (self excluded) are kept;
/// ties at the cut are broken by ascending item index. Zero rows score 0
/// against everything. Throws ShapeError when the feature dimension is 0.
ItemItemGraph build_knn_graph(const DenseMatrix& features, const KnnOptions& options = {});

/// Rebuilds degrees and the normalized matrix from a top-K score pattern.
ItemItemGraph finish_knn_graph(SparseMatrix neighbor_scores, std::size_t k, bool symmetrize);

/// A^(l) = S_hat * A^(l-1), A^(0) = item_embeddings; returns A^(layers).
DenseMatrix aggregate_ii(const ItemItemGraph& graph, const DenseMatrix& item_embeddings,
                         std::size_t layers);
/// (S_hat^T)^layers * grad.
DenseMatrix aggregate_ii_backward(const ItemItemGraph& graph, const DenseMatrix& grad,
                                  std::size_t layers);

/// Binary cache of the top-K score pattern. The header stores K, the
/// symmetrize flag and a caller-supplied key (typically a hash of the
/// feature file); load returns nullopt when the file is absent or its key,
/// K or flag differ.
void save_knn_cache(const std::filesystem::path& path, const ItemItemGraph& graph,
                    bool symmetrize, const std::string& key);
std::optional<ItemItemGraph> load_knn_cache(const std::filesystem::path& path,
                                            std::size_t k, bool symmetrize,
                                            const std::string& key);

}  // namespace diffcl
