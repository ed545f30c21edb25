#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diffcl/matrix.hpp"
#include "diffcl/rng.hpp"

namespace diffcl {

struct ScheduleOptions {
  std::size_t steps = 5;
  double scale = 0.1;
  double gamma_min = 1e-3;
  double gamma_max = 1e-2;
};

/// Linear schedule on the cumulative noise level:
///   1 - gamma_bar_t = scale * g_t,  g_t = gamma_min + (t-1)/(T-1) * (gamma_max - gamma_min)
/// for t = 1..T, with gamma_bar_0 = 1 and g_0 = 0. Per-step quantities are
/// derived from the profile g so that scale = 0 (a noiseless chain) stays
/// well defined:
///   beta_t  = scale * (g_t - g_{t-1}) / gamma_bar_{t-1},  gamma_t = 1 - beta_t
class NoiseSchedule {
 public:
  /// Throws ConfigError unless T >= 2, 0 < gamma_min < gamma_max < 1 and
  /// scale in [0, 1].
  explicit NoiseSchedule(const ScheduleOptions& options);

  const ScheduleOptions& options() const { return options_; }
  std::size_t steps() const { return options_.steps; }

  // Valid for t in [0, T].
  double gamma_bar(std::size_t t) const;
  double one_minus_gamma_bar(std::size_t t) const;
  // Valid for t in [1, T].
  double gamma(std::size_t t) const;
  double beta(std::size_t t) const;

  // Gaussian posterior q(x_{t-1} | x_t, x_0) = N(c0 x_0 + ct x_t, var).
  double posterior_variance(std::size_t t) const;
  double posterior_x0_coef(std::size_t t) const;
  double posterior_xt_coef(std::size_t t) const;

 private:
  void check_step(std::size_t t, std::size_t lowest) const;

  ScheduleOptions options_;
  std::vector<double> profile_;  // g_t, t = 0..T
  std::vector<double> gamma_bar_;
  std::vector<double> beta_;
};

NoiseSchedule build_schedule(std::size_t steps, double scale, double gamma_min,
                             double gamma_max);

/// Sinusoidal embedding of a diffusion step: the first dim/2 entries are
/// sin(t * w_k), the rest cos(t * w_k), with w_k = 10000^(-k / (dim/2)).
std::vector<double> time_embedding(std::size_t t, std::size_t dim);

struct DenoiserOptions {
  std::size_t dim = 64;
  std::size_t hidden = 64;
  std::size_t time_dim = 16;
  // Predict x0 as x_t + MLP(...) instead of MLP(...).
  bool residual = true;
  // Adds a head producing v, with reverse variance
  // exp(v * log beta_t + (1 - v) * log posterior_variance_t).
  bool learned_variance = false;
};

struct DenoiserWeights {
  DenseMatrix w1, b1;  // (dim + time_dim) x hidden
  DenseMatrix w2, b2;  // hidden x hidden
  DenseMatrix w_out, b_out;  // hidden x dim
  DenseMatrix w_var, b_var;  // hidden x dim, empty unless learned_variance
};

/// Two-hidden-layer tanh MLP mapping [x_t, time_embedding(t)] to an x0
/// estimate (and optionally a variance mix).
class Denoiser {
 public:
  struct Output {
    DenseMatrix x0;
    DenseMatrix variance_mix;  // empty unless learned_variance
  };
  struct Tape {
    DenseMatrix input;  // [x_t, time embedding]
    DenseMatrix h1;
    DenseMatrix h2;
  };

  Denoiser() = default;
  /// All-zero weights.
  explicit Denoiser(const DenoiserOptions& options);
  /// Xavier-normal hidden layers, zero output heads: with the residual
  /// connection the initial prediction is x0 = x_t.
  static Denoiser initialized(const DenoiserOptions& options, Rng rng);

  const DenoiserOptions& options() const { return options_; }
  DenoiserWeights& weights() { return weights_; }
  const DenoiserWeights& weights() const { return weights_; }

  /// `steps[r]` is the diffusion step of row r.
  Output forward(const DenseMatrix& x_t, std::span<const std::size_t> steps,
                 Tape* tape = nullptr) const;
  /// Accumulates parameter gradients into `grads` (when non-null) and
  /// returns dL/dx_t. `grad_mix` may be null.
  DenseMatrix backward(const Tape& tape, const DenseMatrix& grad_x0,
                       const DenseMatrix* grad_mix, DenoiserWeights* grads) const;

  DenoiserWeights zero_weights() const;

 private:
  DenoiserOptions options_;
  DenoiserWeights weights_;
};

/// Named views of every tensor in a weight set, in a fixed order.
std::vector<std::pair<std::string, DenseMatrix*>> named_tensors(DenoiserWeights& w,
                                                                const std::string& prefix);

/// Closed-form forward noising x_t = sqrt(gamma_bar_t) x0 + sqrt(1 - gamma_bar_t) eps.
/// Row r draws eps from rng.substream(row_keys[r]) (row_keys defaults to
/// the row index), so results do not depend on row batching.
DenseMatrix q_sample(const DenseMatrix& x0, std::size_t t, const NoiseSchedule& schedule,
                     const Rng& rng, std::span<const std::size_t> row_keys = {});

/// One Markov step q(x_t | x_{t-1}) = N(sqrt(1 - beta_t) x_{t-1}, beta_t I).
DenseMatrix forward_step(const DenseMatrix& x_prev, std::size_t t, const NoiseSchedule& schedule,
                         const Rng& rng, std::span<const std::size_t> row_keys = {});

struct X0Prediction {
  DenseMatrix x0;
  DenseMatrix variance_mix;  // empty: fixed posterior variance
};
using X0Predictor = std::function<X0Prediction(const DenseMatrix& x_t, std::size_t t)>;

/// x_{t-1} = mu + sqrt(var) z with mu the posterior mean at the predicted
/// x0; at t = 1 the mean is returned without noise. Throws DivergenceError
/// on non-finite predictions.
DenseMatrix reverse_step(const DenseMatrix& x_t, std::size_t t, const X0Predictor& predictor,
                         const NoiseSchedule& schedule, const Rng& rng,
                         std::span<const std::size_t> row_keys = {});
DenseMatrix reverse_step(const DenseMatrix& x_t, std::size_t t, const Denoiser& denoiser,
                         const NoiseSchedule& schedule, const Rng& rng,
                         std::span<const std::size_t> row_keys = {});

/// Everything generate_view needs to differentiate through the chain.
struct ViewTape {
  struct Step {
    std::size_t t = 0;
    Denoiser::Tape denoiser;
    DenseMatrix noise;     // z, empty at t = 1
    DenseMatrix variance;  // per-entry variance used with z
    DenseMatrix mix;       // learned variance mix, if any
  };
  std::size_t depth = 0;
  std::vector<Step> steps;  // in execution order: depth, depth-1, ..., 1
};

/// Noises `embeddings` to `depth` with q_sample, then runs reverse steps
/// down to x0. Forward noise for row r comes from
/// rng.substream("forward").substream(key_r); the step-t reverse noise from
/// rng.substream("reverse").substream(t).substream(key_r).
DenseMatrix generate_view(const DenseMatrix& embeddings, std::size_t depth,
                          const Denoiser& denoiser, const NoiseSchedule& schedule,
                          const Rng& rng, std::span<const std::size_t> row_keys = {},
                          ViewTape* tape = nullptr);
DenseMatrix generate_view(const DenseMatrix& embeddings, std::size_t depth,
                          const X0Predictor& predictor, const NoiseSchedule& schedule,
                          const Rng& rng, std::span<const std::size_t> row_keys = {});

/// Vector-Jacobian product of generate_view with respect to the input
/// embeddings; denoiser parameter gradients are accumulated into `grads`
/// when non-null.
DenseMatrix generate_view_backward(const ViewTape& tape, const Denoiser& denoiser,
                                   const NoiseSchedule& schedule, const DenseMatrix& grad_view,
                                   DenoiserWeights* grads);

struct DiffusionLoss {
  double value = 0.0;
  double reconstruction = 0.0;
  // KL term training the variance head; 0 in fixed-variance mode.
  double variance = 0.0;
};

/// Mean over rows of |denoiser(x_t, t) - x0|^2 with t ~ U{1..T} and x_t
/// from q_sample, both drawn from rng.substream(key_r). x0 is a constant.
/// In learned-variance mode, adds the mean over rows with t >= 2 of
/// KL(q(x_{t-1}|x_t,x0) || N(mu_theta, Sigma_theta)). Gradients (scaled by
/// grad_scale) go to `grads` when non-null.
DiffusionLoss diffusion_loss(const DenseMatrix& x0, const Denoiser& denoiser,
                             const NoiseSchedule& schedule, const Rng& rng,
                             std::span<const std::size_t> row_keys = {},
                             DenoiserWeights* grads = nullptr, double grad_scale = 1.0);

}  // namespace diffcl
