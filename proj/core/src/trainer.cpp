#include "diffcl/trainer.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "diffcl/error.hpp"

namespace diffcl {

EmbeddingSet inference_embeddings(const DiffClParams& params, const ModalityFeatures& features,
                                  const ModelGraphs& graphs, const ModelOptions& options,
                                  const VariantMask& mask) {
  // Views play no part in scoring, so they are skipped here.
  VariantMask scoring = mask;
  scoring.diff = false;
  return forward(params, features, graphs, options, scoring, Rng(0), false);
}

RankingResult evaluate_split(const DenseMatrix& scores, const InteractionDataset& dataset,
                             bool test, std::span<const std::size_t> ks) {
  auto masked = dataset.items_by_user(dataset.train());
  if (test) {
    const auto val = dataset.items_by_user(dataset.validation());
    for (std::size_t u = 0; u < masked.size(); ++u) {
      masked[u].insert(masked[u].end(), val[u].begin(), val[u].end());
      std::sort(masked[u].begin(), masked[u].end());
    }
  }
  const auto truth = dataset.items_by_user(test ? dataset.test() : dataset.validation());
  return evaluate(scores, masked, truth, ks);
}

Trainer::Trainer(const InteractionDataset& dataset, const ModalityFeatures& features,
                 const ModelGraphs& graphs, const ModelOptions& model, const TrainOptions& train,
                 const VariantMask& mask)
    : dataset_(dataset),
      features_(features),
      graphs_(graphs),
      model_(model),
      train_(train),
      mask_(mask) {
  model_.validate();
  if (train_.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(train_.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (train_.eval_ks.empty()) throw ConfigError("eval ks must not be empty");
  if (dataset_.train().empty()) throw DataError("no train interactions");
  const ModelShape shape{dataset.user_count(), dataset.item_count(), features.visual.cols(),
                         features.textual.cols()};
  params_ = init_params(shape, model_, Rng(train_.seed).substream("params"));
  adam_.options.learning_rate = train_.learning_rate;
}

LossBreakdown Trainer::train_epoch() {
  ++epoch_;
  const Rng epoch_rng = Rng(train_.seed).substream("train").substream(epoch_);
  const std::size_t n = dataset_.train().size();
  const std::size_t batches = (n + train_.batch_size - 1) / train_.batch_size;

  LossBreakdown mean;
  DiffClParams grads = params_.zeros_like();
  for (std::size_t b = 0; b < batches; ++b) {
    const Rng batch_rng = epoch_rng.substream(b);
    Rng neg_rng = batch_rng.substream("triplets");
    const std::size_t size = std::min(train_.batch_size, n - b * train_.batch_size);
    const auto triplets = sample_triplets(dataset_, size, neg_rng);
    if (triplets.empty()) continue;

    for (auto& [name, t] : grads.tensors()) t->fill(0.0);
    const LossBreakdown loss = batch_loss(params_, features_, graphs_, model_, mask_, triplets,
                                          batch_rng.substream("step"), &grads);
    auto values = params_.tensors();
    auto gs = grads.tensors();
    std::vector<ParamSlot> slots;
    slots.reserve(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) {
      slots.push_back({values[k].first, values[k].second, gs[k].second});
    }
    adam_step(slots, adam_);
    if (!params_.all_finite()) throw DivergenceError("non-finite parameter after update");

    mean.bpr += loss.bpr;
    mean.contrastive += loss.contrastive;
    mean.alignment += loss.alignment;
    mean.regularization += loss.regularization;
    mean.diffusion += loss.diffusion;
    mean.total += loss.total;
  }
  const double inv = batches > 0 ? 1.0 / static_cast<double>(batches) : 0.0;
  mean.bpr *= inv;
  mean.contrastive *= inv;
  mean.alignment *= inv;
  mean.regularization *= inv;
  mean.diffusion *= inv;
  mean.total *= inv;
  return mean;
}

RankingResult Trainer::evaluate_validation() const {
  const auto emb = inference_embeddings(params_, features_, graphs_, model_, mask_);
  return evaluate_split(predict_all_scores(emb), dataset_, false, train_.eval_ks);
}

RankingResult Trainer::evaluate_test() const {
  const auto emb = inference_embeddings(params_, features_, graphs_, model_, mask_);
  return evaluate_split(predict_all_scores(emb), dataset_, true, train_.eval_ks);
}

FitResult Trainer::fit(const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<std::size_t> ks = train_.eval_ks;
  if (std::find(ks.begin(), ks.end(), train_.stop_k) == ks.end()) {
    throw ConfigError("stop_k must be one of the eval ks");
  }
  FitResult out;
  DiffClParams best = params_;
  double best_score = -1.0;
  std::size_t stale = 0;
  for (std::size_t e = 0; e < train_.epochs; ++e) {
    EpochRecord rec;
    rec.loss = train_epoch();
    rec.epoch = epoch_;
    rec.validation = evaluate_validation();
    const double score = rec.validation.recall_at(train_.stop_k);
    spdlog::info(
        "epoch {} total={:.6f} bpr={:.6f} cl={:.6f} align={:.6f} reg={:.6f} diff={:.6f} "
        "val_R@{}={:.4f}",
        rec.epoch, rec.loss.total, rec.loss.bpr, rec.loss.contrastive, rec.loss.alignment,
        rec.loss.regularization, rec.loss.diffusion, train_.stop_k, score);
    if (on_epoch) on_epoch(rec);
    if (score > best_score) {
      best_score = score;
      best = params_;
      out.best_epoch = rec.epoch;
      out.best_validation = rec.validation;
      stale = 0;
    } else if (train_.patience > 0 && ++stale >= train_.patience) {
      out.history.push_back(std::move(rec));
      spdlog::info("early stop at epoch {}; best epoch {}", epoch_, out.best_epoch);
      break;
    }
    out.history.push_back(std::move(rec));
  }
  params_ = std::move(best);
  out.test = evaluate_test();
  if (out.best_epoch == 0) out.best_validation = evaluate_validation();
  return out;
}

}  // namespace diffcl
