#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffcl/dataset.hpp"
#include "diffcl/diffusion.hpp"
#include "diffcl/graph.hpp"
#include "diffcl/losses.hpp"
#include "diffcl/matrix.hpp"
#include "diffcl/rng.hpp"

namespace diffcl {

/// Which optional components are active.
struct VariantMask {
  bool diff = true;     // diffusion views + contrastive loss
  bool align = true;    // ID-guided alignment loss
  bool enhance = true;  // item-item graph enhancement

  /// Canonical variant name: baseline, diff, align, h, diff+align, diff+h,
  /// align+h, full.
  std::string name() const;
  friend bool operator==(const VariantMask&, const VariantMask&) = default;
};

struct Variant {
  std::string name;
  VariantMask mask;
};

/// The eight component combinations, baseline first and full last.
std::vector<Variant> variant_suite();
std::optional<VariantMask> parse_variant(std::string_view name);

enum class AlignRows { kBoth, kUsers, kItems };

struct ModelOptions {
  std::size_t embedding_dim = 64;
  std::size_t layers = 2;
  double dropout = 0.5;
  std::size_t ii_layers = 1;
  ScheduleOptions schedule{};
  std::size_t view_depth = 5;
  std::size_t denoiser_hidden = 64;
  std::size_t denoiser_time_dim = 16;
  bool learned_variance = false;
  LossWeights weights{};
  AlignRows align_rows = AlignRows::kBoth;
  // Standard deviation of the ID tables at init; 0 uses the fan-based scale.
  double id_init_std = 0.01;

  /// Throws ConfigError on invalid values.
  void validate() const;
  DenoiserOptions denoiser_options() const;
};

struct ModelShape {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t visual_dim = 0;
  std::size_t textual_dim = 0;
};

/// Every trainable tensor.
struct DiffClParams {
  DenseMatrix user_id;    // |U| x d
  DenseMatrix item_id;    // |I| x d
  DenseMatrix w_visual;   // d_v x d
  DenseMatrix b_visual;   // 1 x d
  DenseMatrix w_textual;  // d_t x d
  DenseMatrix b_textual;  // 1 x d
  DenseMatrix fusion;     // 1 x 1, the visual weight mu
  Denoiser visual_denoiser;
  Denoiser textual_denoiser;

  double fusion_weight() const { return fusion(0, 0); }
  /// Fixed-order list of (name, tensor).
  std::vector<std::pair<std::string, DenseMatrix*>> tensors();
  /// Same layout, all zeros.
  DiffClParams zeros_like() const;
  bool all_finite();
};

/// ID tables ~ N(0, id_init_std^2), projections ~ N(0, 2 / (fan_in + fan_out)),
/// zero biases,
/// fusion weight 0.5, denoisers from Denoiser::initialized.
DiffClParams init_params(const ModelShape& shape, const ModelOptions& options, const Rng& rng);

struct ModelGraphs {
  NormalizedBipartiteGraph bipartite;
  ItemItemGraph visual;
  ItemItemGraph textual;
};

ModelGraphs build_graphs(const InteractionDataset& dataset, const ModalityFeatures& features,
                         const KnnOptions& knn);

struct ViewPair {
  DenseMatrix first;
  DenseMatrix second;
};

/// Derived embeddings, all (|U| + |I|) x d with users first.
struct EmbeddingSet {
  std::size_t user_count = 0;
  DenseMatrix visual;    // E_v after graph encoding
  DenseMatrix textual;   // E_t
  DenseMatrix id;        // E_id
  DenseMatrix visual_aggregate;   // A_v (item rows only; empty unless enhanced)
  DenseMatrix textual_aggregate;  // A_t
  DenseMatrix visual_final;   // E_v with item rows enhanced
  DenseMatrix textual_final;  // E_t with item rows enhanced
  DenseMatrix fused;          // mu * visual_final + (1 - mu) * textual_final
  std::optional<ViewPair> visual_views;
  std::optional<ViewPair> textual_views;
};

/// Full-graph forward pass. Views are generated for every row when
/// mask.diff is set; dropout applies only when `training`.
EmbeddingSet forward(const DiffClParams& params, const ModalityFeatures& features,
                     const ModelGraphs& graphs, const ModelOptions& options,
                     const VariantMask& mask, const Rng& rng, bool training);

/// y(u, i) = <fused_u, fused_i> + <id_u, id_i> for every pair.
DenseMatrix predict_scores(const EmbeddingSet& embeddings, std::span<const std::size_t> users,
                           std::span<const std::size_t> items);
/// All users against all items.
DenseMatrix predict_all_scores(const EmbeddingSet& embeddings);

// Values the objective treats as constants: the diffusion regression
// targets and the ID alignment anchor.
struct DetachedValues {
  // False: batch_loss computes the values and stores them here.
  // True: batch_loss uses the stored values.
  bool frozen = false;
  DenseMatrix diffusion_visual;
  DenseMatrix diffusion_textual;
  GaussianSummary align_anchor;
};

/// One minibatch of the training objective. BPR and the regularizer are
/// averaged over triplets, each contrastive block over its rows; the
/// alignment term uses all rows selected by options.align_rows. Disabled
/// components contribute exactly 0. When `grads` is non-null it receives
/// d total / d param for every tensor (it must have the params' layout).
/// Diffusion targets and the alignment anchor get no gradient; pass a frozen
/// `detached` to hold them fixed, e.g. for finite differences.
LossBreakdown batch_loss(const DiffClParams& params, const ModalityFeatures& features,
                         const ModelGraphs& graphs, const ModelOptions& options,
                         const VariantMask& mask, std::span<const BprTriplet> batch,
                         const Rng& step_rng, DiffClParams* grads,
                         DetachedValues* detached = nullptr);

}  // namespace diffcl
