#include "diffcl/losses.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/fmt/fmt.h>

#include "diffcl/error.hpp"

namespace diffcl {

void LossWeights::validate() const {
  if (!(temperature > 0.0)) {
    throw ConfigError(fmt::format("temperature tau={} must be > 0", temperature));
  }
  if (contrastive < 0.0 || alignment < 0.0 || regularization < 0.0 || diffusion < 0.0) {
    throw ConfigError("loss weights must be >= 0");
  }
}

namespace {

constexpr double kNormEps = 1e-12;

struct Normalized {
  DenseMatrix unit;
  std::vector<double> norm;  // max(|x|, eps)
};

Normalized normalize_rows(const DenseMatrix& m) {
  Normalized out{m, std::vector<double>(m.rows())};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out.norm[r] = std::max(std::sqrt(squared_norm(m.row(r))), kNormEps);
    for (double& v : out.unit.row(r)) v /= out.norm[r];
  }
  return out;
}

// Gradient w.r.t. x given the gradient w.r.t. its normalized row x_hat.
DenseMatrix normalize_backward(const Normalized& n, const DenseMatrix& grad_unit) {
  DenseMatrix g = grad_unit;
  for (std::size_t r = 0; r < g.rows(); ++r) {
    auto gr = g.row(r);
    const auto u = n.unit.row(r);
    const double raw_norm = std::sqrt(squared_norm(u)) * n.norm[r];
    if (raw_norm <= kNormEps) {
      // Clamped branch: x_hat = x / eps.
      for (double& v : gr) v /= kNormEps;
      continue;
    }
    const double proj = dot(gr, u);
    for (std::size_t j = 0; j < gr.size(); ++j) gr[j] = (gr[j] - proj * u[j]) / n.norm[r];
  }
  return g;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

InfoNceResult infonce(const DenseMatrix& view1, const DenseMatrix& view2, double temperature) {
  require_same_shape(view1, view2, "infonce");
  if (view1.rows() < 2) throw ShapeError("infonce: needs at least 2 rows");
  if (!(temperature > 0.0)) throw ConfigError("infonce: temperature must be > 0");

  const Normalized n1 = normalize_rows(view1);
  const Normalized n2 = normalize_rows(view2);
  DenseMatrix logits = matmul_nt(n1.unit, n2.unit);
  for (double& v : logits.values()) v /= temperature;

  InfoNceResult out;
  const std::size_t rows = logits.rows();
  // d loss / d logits = softmax - identity, row by row.
  DenseMatrix g_logits(rows, rows);
  for (std::size_t a = 0; a < rows; ++a) {
    const auto row = logits.row(a);
    const double lse = log_sum_exp(row);
    out.loss += lse - row[a];
    auto g = g_logits.row(a);
    for (std::size_t b = 0; b < rows; ++b) g[b] = std::exp(row[b] - lse);
    g[a] -= 1.0;
  }
  for (double& v : g_logits.values()) v /= temperature;

  out.grad_view1 = normalize_backward(n1, matmul(g_logits, n2.unit));
  out.grad_view2 = normalize_backward(n2, matmul_tn(g_logits, n1.unit));
  return out;
}

ContrastiveResult cl_loss(const ModalityViews& visual, const ModalityViews& textual,
                          double temperature, double lambda_cl) {
  ContrastiveResult out;
  const auto one = [&](const ModalityViews& views, ModalityViews& grads) {
    auto users = infonce(views.user1, views.user2, temperature);
    auto items = infonce(views.item1, views.item2, temperature);
    grads.user1 = scaled(users.grad_view1, lambda_cl);
    grads.user2 = scaled(users.grad_view2, lambda_cl);
    grads.item1 = scaled(items.grad_view1, lambda_cl);
    grads.item2 = scaled(items.grad_view2, lambda_cl);
    return users.loss + items.loss;
  };
  const double visual_loss = one(visual, out.grad_visual);
  const double textual_loss = one(textual, out.grad_textual);
  out.loss = lambda_cl * (visual_loss + textual_loss);
  return out;
}

GaussianSummary gaussian_summary(const DenseMatrix& embeddings) {
  const std::size_t n = embeddings.rows();
  const std::size_t d = embeddings.cols();
  if (n == 0) throw ShapeError("gaussian_summary: empty matrix");
  GaussianSummary s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = embeddings.row(r);
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += row[k];
  }
  for (double& m : s.mean) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = embeddings.row(r);
    for (std::size_t k = 0; k < d; ++k) {
      const double c = row[k] - s.mean[k];
      var[k] += c * c;
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    s.stddev[k] = std::sqrt(var[k] / static_cast<double>(n) + 1e-8);
  }
  return s;
}

AlignResult align_loss(const DenseMatrix& id, const DenseMatrix& visual,
                       const DenseMatrix& textual, double lambda_align) {
  if (id.cols() != visual.cols() || id.cols() != textual.cols()) {
    throw ShapeError(fmt::format("align_loss: column counts {}, {}, {}", id.cols(),
                                 visual.cols(), textual.cols()));
  }
  return align_loss(gaussian_summary(id), visual, textual, lambda_align);
}

AlignResult align_loss(const GaussianSummary& anchor, const DenseMatrix& visual,
                       const DenseMatrix& textual, double lambda_align) {
  const std::size_t d = anchor.mean.size();
  if (visual.cols() != d || textual.cols() != d || anchor.stddev.size() != d) {
    throw ShapeError(fmt::format("align_loss: column counts {}, {}, {}", d, visual.cols(),
                                 textual.cols()));
  }
  AlignResult out;
  const auto one = [&](const DenseMatrix& m, DenseMatrix& grad) {
    const GaussianSummary s = gaussian_summary(m);
    const std::size_t n = m.rows();
    double loss = 0.0;
    std::vector<double> g_mean(d), g_sd(d);
    for (std::size_t k = 0; k < d; ++k) {
      loss += std::abs(anchor.mean[k] - s.mean[k]) + std::abs(anchor.stddev[k] - s.stddev[k]);
      g_mean[k] = lambda_align * sign(s.mean[k] - anchor.mean[k]);
      g_sd[k] = lambda_align * sign(s.stddev[k] - anchor.stddev[k]);
    }
    // d mean_k / dx_rk = 1/n;  d sd_k / dx_rk = (x_rk - mean_k) / (n sd_k).
    grad = DenseMatrix(n, d);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      const auto row = m.row(r);
      auto g = grad.row(r);
      for (std::size_t k = 0; k < d; ++k) {
        g[k] = inv_n * (g_mean[k] + g_sd[k] * (row[k] - s.mean[k]) / s.stddev[k]);
      }
    }
    return loss;
  };
  const double visual_loss = one(visual, out.grad_visual);
  const double textual_loss = one(textual, out.grad_textual);
  out.loss = lambda_align * (visual_loss + textual_loss);
  return out;
}

BprResult bpr_loss(std::span<const double> positive_scores,
                   std::span<const double> negative_scores) {
  if (positive_scores.size() != negative_scores.size()) {
    throw ShapeError(fmt::format("bpr_loss: {} positive vs {} negative scores",
                                 positive_scores.size(), negative_scores.size()));
  }
  BprResult out;
  out.grad_positive.resize(positive_scores.size());
  out.grad_negative.resize(positive_scores.size());
  for (std::size_t k = 0; k < positive_scores.size(); ++k) {
    const double margin = positive_scores[k] - negative_scores[k];
    out.loss += softplus(-margin);
    // d softplus(-m) / dm = -sigmoid(-m)
    const double g = -sigmoid(-margin);
    out.grad_positive[k] = g;
    out.grad_negative[k] = -g;
  }
  return out;
}

L2Result l2_reg(const DenseMatrix& visual, const DenseMatrix& textual, double lambda_e) {
  L2Result out;
  out.loss = lambda_e * (frobenius_sq(visual) + frobenius_sq(textual));
  out.grad_visual = scaled(visual, 2.0 * lambda_e);
  out.grad_textual = scaled(textual, 2.0 * lambda_e);
  return out;
}

double total_loss(const LossBreakdown& c, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {
      {"bpr", c.bpr},
      {"contrastive", c.contrastive},
      {"alignment", c.alignment},
      {"regularization", c.regularization},
      {"diffusion", c.diffusion},
  };
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      throw DivergenceError(fmt::format("non-finite {} loss component ({})", name, value));
    }
  }
  return w.contrastive * c.contrastive + c.alignment + c.bpr + c.regularization +
         w.diffusion * c.diffusion;
}

}  // namespace diffcl
