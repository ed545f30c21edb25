#pragma once

#include <span>
#include <string>
#include <vector>

#include "diffcl/matrix.hpp"

namespace diffcl {

struct LossWeights {
  double contrastive = 0.1;   // lambda_cl
  double alignment = 0.4;     // lambda_align
  double regularization = 0.7;  // lambda_E
  double diffusion = 1.0;     // lambda_diff
  double temperature = 0.4;   // tau

  /// Throws ConfigError on negative weights or tau <= 0.
  void validate() const;
};

struct InfoNceResult {
  double loss = 0.0;
  DenseMatrix grad_view1;
  DenseMatrix grad_view2;
};

/// Sum over rows a of
///   -log( exp(cos(v1_a, v2_a)/tau) / sum_b exp(cos(v1_a, v2_b)/tau) ),
/// evaluated with log-sum-exp. Rows are normalized by max(|x|, 1e-12).
InfoNceResult infonce(const DenseMatrix& view1, const DenseMatrix& view2, double temperature);

/// Two views of one modality, split into user rows and item rows.
struct ModalityViews {
  DenseMatrix user1;
  DenseMatrix user2;
  DenseMatrix item1;
  DenseMatrix item2;
};

struct ContrastiveResult {
  double loss = 0.0;
  ModalityViews grad_visual;
  ModalityViews grad_textual;
};

/// lambda_cl * [(L_u^v + L_i^v) + (L_u^t + L_i^t)], each term an infonce
/// over the user or item rows of one modality.
ContrastiveResult cl_loss(const ModalityViews& visual, const ModalityViews& textual,
                          double temperature, double lambda_cl);

struct GaussianSummary {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Column means and population standard deviations sqrt(var + 1e-8).
GaussianSummary gaussian_summary(const DenseMatrix& embeddings);

struct AlignResult {
  double loss = 0.0;
  DenseMatrix grad_visual;
  DenseMatrix grad_textual;
};

/// lambda_align * sum_k (|mu_id - mu_v| + |sd_id - sd_v| + |mu_id - mu_t| + |sd_id - sd_t|).
/// The ID summary is a fixed anchor: only the visual and textual inputs
/// receive gradients (sign(0) = 0).
AlignResult align_loss(const DenseMatrix& id, const DenseMatrix& visual,
                       const DenseMatrix& textual, double lambda_align);
/// Same with a precomputed ID summary.
AlignResult align_loss(const GaussianSummary& anchor, const DenseMatrix& visual,
                       const DenseMatrix& textual, double lambda_align);

struct BprResult {
  double loss = 0.0;
  std::vector<double> grad_positive;
  std::vector<double> grad_negative;
};

/// sum_k softplus(-(pos_k - neg_k)).
BprResult bpr_loss(std::span<const double> positive_scores,
                   std::span<const double> negative_scores);

struct L2Result {
  double loss = 0.0;
  DenseMatrix grad_visual;
  DenseMatrix grad_textual;
};

/// lambda_E * (|visual|_F^2 + |textual|_F^2).
L2Result l2_reg(const DenseMatrix& visual, const DenseMatrix& textual, double lambda_e);

/// Per-component values of one objective evaluation. `contrastive` and
/// `diffusion` are stored before their lambda is applied; `alignment` and
/// `regularization` already include theirs.
struct LossBreakdown {
  double bpr = 0.0;
  double contrastive = 0.0;
  double alignment = 0.0;
  double regularization = 0.0;
  double diffusion = 0.0;
  double total = 0.0;
};

/// lambda_cl * contrastive + alignment + bpr + regularization
/// + lambda_diff * diffusion. Throws DivergenceError naming the first
/// non-finite component.
double total_loss(const LossBreakdown& components, const LossWeights& weights);

}  // namespace diffcl
