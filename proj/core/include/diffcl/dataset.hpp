#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "diffcl/matrix.hpp"
#include "diffcl/rng.hpp"

namespace diffcl {

struct Interaction {
  std::size_t user = 0;
  std::size_t item = 0;
  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

struct RawInteraction {
  std::string user;
  std::string item;
};

/// Dense index -> original id string.
struct IdMaps {
  std::vector<std::string> users;
  std::vector<std::string> items;
};

struct FilteredInteractions {
  std::vector<Interaction> interactions;  // sorted by (user, item), unique
  IdMaps ids;
};

/// Users, items and a train/validation/test partition of their
/// interactions. The binary interaction matrix J is built from the train
/// split only.
class InteractionDataset {
 public:
  InteractionDataset() = default;
  /// Throws DataError on out-of-range indices, duplicate pairs or overlap
  /// between splits.
  InteractionDataset(std::size_t user_count, std::size_t item_count,
                     std::vector<Interaction> train, std::vector<Interaction> validation,
                     std::vector<Interaction> test);

  std::size_t user_count() const { return user_count_; }
  std::size_t item_count() const { return item_count_; }
  const std::vector<Interaction>& train() const { return train_; }
  const std::vector<Interaction>& validation() const { return validation_; }
  const std::vector<Interaction>& test() const { return test_; }
  std::size_t interaction_count() const {
    return train_.size() + validation_.size() + test_.size();
  }

  /// |U| x |I| binary matrix of train interactions.
  const SparseMatrix& interaction_matrix() const { return matrix_; }
  /// Sorted train items of user u.
  std::span<const std::size_t> train_items(std::size_t user) const;
  bool is_train(std::size_t user, std::size_t item) const;

  /// Per-user sorted item lists for a split.
  std::vector<std::vector<std::size_t>> items_by_user(const std::vector<Interaction>& split) const;

 private:
  std::size_t user_count_ = 0;
  std::size_t item_count_ = 0;
  std::vector<Interaction> train_;
  std::vector<Interaction> validation_;
  std::vector<Interaction> test_;
  SparseMatrix matrix_;
};

/// Visual and textual item features, one row per item.
struct ModalityFeatures {
  DenseMatrix visual;
  DenseMatrix textual;
};

struct BprTriplet {
  std::size_t user = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

/// Iteratively drops users and items with fewer than `min_degree` distinct
/// interactions until nothing changes, then reindexes densely in order of
/// first appearance. Duplicate (user, item) pairs count once. Throws
/// DataError("dataset vanished ...") if nothing survives.
FilteredInteractions five_core_filter(std::span<const RawInteraction> raw,
                                      std::size_t min_degree = 5);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

enum class SplitMode { kPerUser, kGlobal };

/// Random train/validation/test partition.
///
/// Per-user mode: each user's items are shuffled with that user's own
/// substream; users with fewer than 3 interactions keep everything in train,
/// others get max(1, round(n * ratio)) validation and test items and the
/// remainder in train. Global mode cuts one shuffled list and moves the
/// validation/test pairs of users without any train pair back into train.
/// In both modes an item with no train interaction has its first held-out
/// pair moved into train so the interaction graph has no isolated items.
InteractionDataset split_dataset(std::span<const Interaction> interactions,
                                 std::size_t user_count, std::size_t item_count,
                                 const SplitRatios& ratios, const Rng& rng,
                                 SplitMode mode = SplitMode::kPerUser);

/// Samples `batch_size` triplets: (u, p) uniform over train pairs, n
/// uniform over items until (u, n) is not a train pair. Draws whose user has
/// interacted with every item are skipped with a warning, so the result can
/// be shorter than requested.
std::vector<BprTriplet> sample_triplets(const InteractionDataset& dataset,
                                        std::size_t batch_size, Rng& rng);

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double sparsity = 0.0;
};

double sparsity(std::size_t users, std::size_t items, std::size_t interactions);
DatasetStats dataset_stats(const InteractionDataset& dataset);

struct SynthOptions {
  std::size_t block_count = 4;
  std::size_t users_per_block = 50;
  std::size_t items_per_block = 25;
  std::size_t interactions_per_user = 10;
  double noise_rate = 0.1;
  // Within-block popularity exponent; 0 draws block items uniformly.
  double item_skew = 1.0;
  std::size_t visual_dim = 32;
  std::size_t textual_dim = 16;
  // Standard deviation of the per-item jitter around its block centroid.
  double feature_jitter = 0.5;
  SplitRatios ratios{};
};

struct SynthInteractions {
  std::size_t user_count = 0;
  std::size_t item_count = 0;
  std::vector<Interaction> interactions;  // sorted, unique
  std::vector<std::size_t> user_block;
  std::vector<std::size_t> item_block;
  ModalityFeatures features;
};

/// Planted block structure: user u in block b draws each of its
/// interactions from b's items, except that with probability `noise_rate`
/// a draw comes from a uniformly chosen other block. Inside a block the
/// j-th item is drawn with weight (j+1)^-item_skew. Item features are the
/// block centroid (standard normal per modality) plus N(0, jitter^2) noise.
SynthInteractions synth_interactions(const SynthOptions& options, const Rng& rng);

struct SynthDataset {
  InteractionDataset dataset;
  ModalityFeatures features;
  std::vector<std::size_t> user_block;
  std::vector<std::size_t> item_block;
};

/// synth_interactions followed by a per-user split.
SynthDataset synth_dataset(const SynthOptions& options, const Rng& rng);

}  // namespace diffcl
