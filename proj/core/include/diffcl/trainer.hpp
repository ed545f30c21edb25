#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "diffcl/adam.hpp"
#include "diffcl/dataset.hpp"
#include "diffcl/eval.hpp"
#include "diffcl/model.hpp"

namespace diffcl {

struct TrainOptions {
  std::size_t epochs = 200;
  std::size_t batch_size = 2048;
  double learning_rate = 1e-3;
  // Epochs without validation improvement before stopping; 0 disables.
  std::size_t patience = 20;
  std::uint64_t seed = 2024;
  std::vector<std::size_t> eval_ks{10, 20};
  // Early stopping watches validation recall at this cutoff.
  std::size_t stop_k = 20;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;     // means over the epoch's batches
  RankingResult validation;
};

struct FitResult {
  std::size_t best_epoch = 0;  // 0: no epoch ran
  RankingResult best_validation;
  RankingResult test;
  std::vector<EpochRecord> history;
};

/// Scores with the model in inference mode (no dropout).
EmbeddingSet inference_embeddings(const DiffClParams& params, const ModalityFeatures& features,
                                  const ModelGraphs& graphs, const ModelOptions& options,
                                  const VariantMask& mask);

/// Validation: train items masked. Test: train and validation items masked.
RankingResult evaluate_split(const DenseMatrix& scores, const InteractionDataset& dataset,
                             bool test, std::span<const std::size_t> ks);

class Trainer {
 public:
  /// Validates options and initializes params from seed.
  Trainer(const InteractionDataset& dataset, const ModalityFeatures& features,
          const ModelGraphs& graphs, const ModelOptions& model, const TrainOptions& train,
          const VariantMask& mask);

  /// One pass over ceil(|train| / batch) sampled minibatches, each followed
  /// by an Adam step. Returns the per-component means.
  LossBreakdown train_epoch();

  /// Runs up to `epochs` epochs with early stopping, restores the best
  /// params and evaluates them on the test split.
  FitResult fit(const std::function<void(const EpochRecord&)>& on_epoch = {});

  RankingResult evaluate_validation() const;
  RankingResult evaluate_test() const;

  DiffClParams& params() { return params_; }
  const DiffClParams& params() const { return params_; }
  std::size_t epochs_done() const { return epoch_; }

 private:
  const InteractionDataset& dataset_;
  const ModalityFeatures& features_;
  const ModelGraphs& graphs_;
  ModelOptions model_;
  TrainOptions train_;
  VariantMask mask_;
  DiffClParams params_;
  AdamState adam_;
  std::size_t epoch_ = 0;
};

}  // namespace diffcl
