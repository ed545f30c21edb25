#include "diffcl/diffusion.hpp"

#include <cmath>

#include <spdlog/fmt/fmt.h>

#include "diffcl/error.hpp"

namespace diffcl {

NoiseSchedule::NoiseSchedule(const ScheduleOptions& options) : options_(options) {
  const auto& o = options_;
  if (o.steps < 2) throw ConfigError(fmt::format("diffusion steps T={} must be >= 2", o.steps));
  if (!(o.gamma_min > 0.0 && o.gamma_min < o.gamma_max && o.gamma_max < 1.0)) {
    throw ConfigError(fmt::format("need 0 < gamma_min ({}) < gamma_max ({}) < 1", o.gamma_min,
                                  o.gamma_max));
  }
  if (!(o.scale >= 0.0 && o.scale <= 1.0)) {
    throw ConfigError(fmt::format("noise scale {} outside [0, 1]", o.scale));
  }
  const std::size_t T = o.steps;
  profile_.assign(T + 1, 0.0);
  gamma_bar_.assign(T + 1, 1.0);
  beta_.assign(T + 1, 0.0);
  for (std::size_t t = 1; t <= T; ++t) {
    // Written as a convex combination so both endpoints are exact.
    const double f = static_cast<double>(t - 1) / static_cast<double>(T - 1);
    profile_[t] = (1.0 - f) * o.gamma_min + f * o.gamma_max;
    gamma_bar_[t] = 1.0 - o.scale * profile_[t];
    beta_[t] = o.scale * (profile_[t] - profile_[t - 1]) / gamma_bar_[t - 1];
  }
}

NoiseSchedule build_schedule(std::size_t steps, double scale, double gamma_min,
                             double gamma_max) {
  return NoiseSchedule(ScheduleOptions{steps, scale, gamma_min, gamma_max});
}

void NoiseSchedule::check_step(std::size_t t, std::size_t lowest) const {
  if (t < lowest || t > options_.steps) {
    throw ShapeError(fmt::format("diffusion step {} outside [{}, {}]", t, lowest,
                                 options_.steps));
  }
}

double NoiseSchedule::gamma_bar(std::size_t t) const {
  check_step(t, 0);
  return gamma_bar_[t];
}

double NoiseSchedule::one_minus_gamma_bar(std::size_t t) const {
  check_step(t, 0);
  return options_.scale * profile_[t];
}

double NoiseSchedule::gamma(std::size_t t) const {
  check_step(t, 1);
  return 1.0 - beta_[t];
}

double NoiseSchedule::beta(std::size_t t) const {
  check_step(t, 1);
  return beta_[t];
}

double NoiseSchedule::posterior_variance(std::size_t t) const {
  check_step(t, 1);
  return profile_[t - 1] / profile_[t] * beta_[t];
}

double NoiseSchedule::posterior_x0_coef(std::size_t t) const {
  check_step(t, 1);
  return (profile_[t] - profile_[t - 1]) / (std::sqrt(gamma_bar_[t - 1]) * profile_[t]);
}

double NoiseSchedule::posterior_xt_coef(std::size_t t) const {
  check_step(t, 1);
  return std::sqrt(1.0 - beta_[t]) * profile_[t - 1] / profile_[t];
}

std::vector<double> time_embedding(std::size_t t, std::size_t dim) {
  if (dim % 2 != 0) throw ShapeError(fmt::format("time embedding dim {} must be even", dim));
  std::vector<double> out(dim);
  const std::size_t half = dim / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(static_cast<double>(t) * freq);
    out[half + k] = std::cos(static_cast<double>(t) * freq);
  }
  return out;
}

Denoiser::Denoiser(const DenoiserOptions& options) : options_(options) {
  if (options.dim == 0 || options.hidden == 0) {
    throw ConfigError("denoiser dims must be >= 1");
  }
  if (options.time_dim % 2 != 0) {
    throw ConfigError(fmt::format("denoiser time_dim {} must be even", options.time_dim));
  }
  weights_ = zero_weights();
}

DenoiserWeights Denoiser::zero_weights() const {
  const auto& o = options_;
  DenoiserWeights w;
  w.w1 = DenseMatrix(o.dim + o.time_dim, o.hidden);
  w.b1 = DenseMatrix(1, o.hidden);
  w.w2 = DenseMatrix(o.hidden, o.hidden);
  w.b2 = DenseMatrix(1, o.hidden);
  w.w_out = DenseMatrix(o.hidden, o.dim);
  w.b_out = DenseMatrix(1, o.dim);
  if (o.learned_variance) {
    w.w_var = DenseMatrix(o.hidden, o.dim);
    w.b_var = DenseMatrix(1, o.dim);
  }
  return w;
}

Denoiser Denoiser::initialized(const DenoiserOptions& options, Rng rng) {
  Denoiser d(options);
  const auto xavier = [&rng](DenseMatrix& m) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(m.rows() + m.cols()));
    for (double& v : m.values()) v = stddev * rng.normal();
  };
  xavier(d.weights_.w1);
  xavier(d.weights_.w2);
  return d;
}

std::vector<std::pair<std::string, DenseMatrix*>> named_tensors(DenoiserWeights& w,
                                                                const std::string& prefix) {
  std::vector<std::pair<std::string, DenseMatrix*>> out{
      {prefix + "w1", &w.w1},       {prefix + "b1", &w.b1},
      {prefix + "w2", &w.w2},       {prefix + "b2", &w.b2},
      {prefix + "w_out", &w.w_out}, {prefix + "b_out", &w.b_out},
  };
  if (!w.w_var.empty()) {
    out.emplace_back(prefix + "w_var", &w.w_var);
    out.emplace_back(prefix + "b_var", &w.b_var);
  }
  return out;
}

namespace {

void tanh_inplace(DenseMatrix& m) {
  for (double& v : m.values()) v = std::tanh(v);
}

// g *= (1 - h^2)
void tanh_backward(DenseMatrix& g, const DenseMatrix& h) {
  auto gv = g.values();
  const auto hv = h.values();
  for (std::size_t k = 0; k < gv.size(); ++k) gv[k] *= 1.0 - hv[k] * hv[k];
}

std::size_t row_key(std::span<const std::size_t> keys, std::size_t r) {
  return keys.empty() ? r : keys[r];
}

void check_keys(std::span<const std::size_t> keys, std::size_t rows) {
  if (!keys.empty() && keys.size() != rows) {
    throw ShapeError(fmt::format("{} row keys for {} rows", keys.size(), rows));
  }
}

}  // namespace

Denoiser::Output Denoiser::forward(const DenseMatrix& x_t, std::span<const std::size_t> steps,
                                   Tape* tape) const {
  const auto& o = options_;
  if (x_t.cols() != o.dim || steps.size() != x_t.rows()) {
    throw ShapeError(fmt::format("denoiser: input {}x{} with {} steps, expected width {}",
                                 x_t.rows(), x_t.cols(), steps.size(), o.dim));
  }
  DenseMatrix input(x_t.rows(), o.dim + o.time_dim);
  for (std::size_t r = 0; r < x_t.rows(); ++r) {
    auto dst = input.row(r);
    std::copy(x_t.row(r).begin(), x_t.row(r).end(), dst.begin());
    if (o.time_dim > 0) {
      const auto emb = time_embedding(steps[r], o.time_dim);
      std::copy(emb.begin(), emb.end(), dst.begin() + static_cast<std::ptrdiff_t>(o.dim));
    }
  }
  DenseMatrix h1 = matmul(input, weights_.w1);
  add_row_broadcast(h1, weights_.b1);
  tanh_inplace(h1);
  DenseMatrix h2 = matmul(h1, weights_.w2);
  add_row_broadcast(h2, weights_.b2);
  tanh_inplace(h2);

  Output out;
  out.x0 = matmul(h2, weights_.w_out);
  add_row_broadcast(out.x0, weights_.b_out);
  if (o.residual) add_scaled(out.x0, x_t);
  if (o.learned_variance) {
    out.variance_mix = matmul(h2, weights_.w_var);
    add_row_broadcast(out.variance_mix, weights_.b_var);
  }
  if (tape != nullptr) {
    tape->input = std::move(input);
    tape->h1 = std::move(h1);
    tape->h2 = std::move(h2);
  }
  return out;
}

DenseMatrix Denoiser::backward(const Tape& tape, const DenseMatrix& grad_x0,
                               const DenseMatrix* grad_mix, DenoiserWeights* grads) const {
  const auto& o = options_;
  const auto& w = weights_;
  DenseMatrix g_h2 = matmul_nt(grad_x0, w.w_out);
  if (grads != nullptr) {
    add_scaled(grads->w_out, matmul_tn(tape.h2, grad_x0));
    add_scaled(grads->b_out, column_sums(grad_x0));
  }
  if (o.learned_variance && grad_mix != nullptr) {
    add_scaled(g_h2, matmul_nt(*grad_mix, w.w_var));
    if (grads != nullptr) {
      add_scaled(grads->w_var, matmul_tn(tape.h2, *grad_mix));
      add_scaled(grads->b_var, column_sums(*grad_mix));
    }
  }
  tanh_backward(g_h2, tape.h2);
  DenseMatrix g_h1 = matmul_nt(g_h2, w.w2);
  if (grads != nullptr) {
    add_scaled(grads->w2, matmul_tn(tape.h1, g_h2));
    add_scaled(grads->b2, column_sums(g_h2));
  }
  tanh_backward(g_h1, tape.h1);
  const DenseMatrix g_input = matmul_nt(g_h1, w.w1);
  if (grads != nullptr) {
    add_scaled(grads->w1, matmul_tn(tape.input, g_h1));
    add_scaled(grads->b1, column_sums(g_h1));
  }
  DenseMatrix g_x(g_input.rows(), o.dim);
  for (std::size_t r = 0; r < g_x.rows(); ++r) {
    const auto src = g_input.row(r);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(o.dim), g_x.row(r).begin());
  }
  if (o.residual) add_scaled(g_x, grad_x0);
  return g_x;
}

DenseMatrix q_sample(const DenseMatrix& x0, std::size_t t, const NoiseSchedule& schedule,
                     const Rng& rng, std::span<const std::size_t> row_keys) {
  if (t < 1 || t > schedule.steps()) {
    throw ShapeError(fmt::format("q_sample: step {} outside [1, {}]", t, schedule.steps()));
  }
  check_keys(row_keys, x0.rows());
  const double signal = std::sqrt(schedule.gamma_bar(t));
  const double noise = std::sqrt(schedule.one_minus_gamma_bar(t));
  DenseMatrix out(x0.rows(), x0.cols());
  for (std::size_t r = 0; r < x0.rows(); ++r) {
    Rng row_rng = rng.substream(row_key(row_keys, r));
    const auto src = x0.row(r);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = signal * src[j] + noise * row_rng.normal();
  }
  return out;
}

DenseMatrix forward_step(const DenseMatrix& x_prev, std::size_t t, const NoiseSchedule& schedule,
                         const Rng& rng, std::span<const std::size_t> row_keys) {
  check_keys(row_keys, x_prev.rows());
  const double keep = std::sqrt(schedule.gamma(t));
  const double noise = std::sqrt(schedule.beta(t));
  DenseMatrix out(x_prev.rows(), x_prev.cols());
  for (std::size_t r = 0; r < x_prev.rows(); ++r) {
    Rng row_rng = rng.substream(row_key(row_keys, r));
    const auto src = x_prev.row(r);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = keep * src[j] + noise * row_rng.normal();
  }
  return out;
}

namespace {

void require_finite(const DenseMatrix& m, const char* what) {
  if (!m.all_finite()) throw DivergenceError(fmt::format("non-finite {} in reverse step", what));
}

// Per-entry variance at step t >= 2.
DenseMatrix step_variance(const NoiseSchedule& schedule, std::size_t t, std::size_t rows,
                          std::size_t cols, const DenseMatrix& mix) {
  const double posterior = schedule.posterior_variance(t);
  if (mix.empty()) return DenseMatrix(rows, cols, posterior);
  if (!(schedule.options().scale > 0.0)) {
    throw ConfigError("learned variance requires a noise scale > 0");
  }
  const double log_beta = std::log(schedule.beta(t));
  const double log_post = std::log(posterior);
  DenseMatrix var(rows, cols);
  auto v = var.values();
  const auto m = mix.values();
  for (std::size_t k = 0; k < v.size(); ++k) {
    v[k] = std::exp(m[k] * log_beta + (1.0 - m[k]) * log_post);
  }
  return var;
}

struct StepResult {
  DenseMatrix next;
  DenseMatrix noise;
  DenseMatrix variance;
};

StepResult apply_reverse(const DenseMatrix& x_t, std::size_t t, const X0Prediction& pred,
                         const NoiseSchedule& schedule, const Rng& step_rng,
                         std::span<const std::size_t> row_keys) {
  require_finite(pred.x0, "x0 prediction");
  if (!pred.variance_mix.empty()) require_finite(pred.variance_mix, "variance head output");
  require_same_shape(pred.x0, x_t, "reverse_step");
  StepResult out;
  out.next = scaled(pred.x0, schedule.posterior_x0_coef(t));
  add_scaled(out.next, x_t, schedule.posterior_xt_coef(t));
  if (t == 1) return out;

  out.variance = step_variance(schedule, t, x_t.rows(), x_t.cols(), pred.variance_mix);
  out.noise = DenseMatrix(x_t.rows(), x_t.cols());
  for (std::size_t r = 0; r < x_t.rows(); ++r) {
    Rng row_rng = step_rng.substream(row_key(row_keys, r));
    auto z = out.noise.row(r);
    auto dst = out.next.row(r);
    const auto var = out.variance.row(r);
    for (std::size_t j = 0; j < z.size(); ++j) {
      z[j] = row_rng.normal();
      dst[j] += std::sqrt(var[j]) * z[j];
    }
  }
  return out;
}

std::vector<std::size_t> constant_steps(std::size_t rows, std::size_t t) {
  return std::vector<std::size_t>(rows, t);
}

}  // namespace

DenseMatrix reverse_step(const DenseMatrix& x_t, std::size_t t, const X0Predictor& predictor,
                         const NoiseSchedule& schedule, const Rng& rng,
                         std::span<const std::size_t> row_keys) {
  if (t < 1 || t > schedule.steps()) {
    throw ShapeError(fmt::format("reverse_step: step {} outside [1, {}]", t, schedule.steps()));
  }
  check_keys(row_keys, x_t.rows());
  return apply_reverse(x_t, t, predictor(x_t, t), schedule, rng, row_keys).next;
}

DenseMatrix reverse_step(const DenseMatrix& x_t, std::size_t t, const Denoiser& denoiser,
                         const NoiseSchedule& schedule, const Rng& rng,
                         std::span<const std::size_t> row_keys) {
  const X0Predictor predictor = [&denoiser](const DenseMatrix& x, std::size_t step) {
    auto out = denoiser.forward(x, constant_steps(x.rows(), step));
    return X0Prediction{std::move(out.x0), std::move(out.variance_mix)};
  };
  return reverse_step(x_t, t, predictor, schedule, rng, row_keys);
}

DenseMatrix generate_view(const DenseMatrix& embeddings, std::size_t depth,
                          const Denoiser& denoiser, const NoiseSchedule& schedule,
                          const Rng& rng, std::span<const std::size_t> row_keys,
                          ViewTape* tape) {
  check_keys(row_keys, embeddings.rows());
  DenseMatrix x = q_sample(embeddings, depth, schedule, rng.substream("forward"), row_keys);
  const Rng reverse_rng = rng.substream("reverse");
  if (tape != nullptr) {
    tape->depth = depth;
    tape->steps.clear();
  }
  for (std::size_t t = depth; t >= 1; --t) {
    ViewTape::Step step;
    step.t = t;
    auto out = denoiser.forward(x, constant_steps(x.rows(), t),
                                tape != nullptr ? &step.denoiser : nullptr);
    X0Prediction pred{std::move(out.x0), std::move(out.variance_mix)};
    auto result = apply_reverse(x, t, pred, schedule, reverse_rng.substream(t), row_keys);
    x = std::move(result.next);
    if (tape != nullptr) {
      step.noise = std::move(result.noise);
      step.variance = std::move(result.variance);
      step.mix = std::move(pred.variance_mix);
      tape->steps.push_back(std::move(step));
    }
  }
  return x;
}

DenseMatrix generate_view(const DenseMatrix& embeddings, std::size_t depth,
                          const X0Predictor& predictor, const NoiseSchedule& schedule,
                          const Rng& rng, std::span<const std::size_t> row_keys) {
  check_keys(row_keys, embeddings.rows());
  DenseMatrix x = q_sample(embeddings, depth, schedule, rng.substream("forward"), row_keys);
  const Rng reverse_rng = rng.substream("reverse");
  for (std::size_t t = depth; t >= 1; --t) {
    x = apply_reverse(x, t, predictor(x, t), schedule, reverse_rng.substream(t), row_keys).next;
  }
  return x;
}

DenseMatrix generate_view_backward(const ViewTape& tape, const Denoiser& denoiser,
                                   const NoiseSchedule& schedule, const DenseMatrix& grad_view,
                                   DenoiserWeights* grads) {
  DenseMatrix g = grad_view;
  // Steps were recorded from t = depth down to 1; walk them in reverse.
  for (auto it = tape.steps.rbegin(); it != tape.steps.rend(); ++it) {
    const auto& step = *it;
    const std::size_t t = step.t;
    DenseMatrix g_x0 = scaled(g, schedule.posterior_x0_coef(t));
    DenseMatrix g_mix;
    if (!step.mix.empty() && !step.noise.empty()) {
      // d sqrt(var) / d mix = 0.5 sqrt(var) (log beta - log posterior_var)
      const double log_ratio =
          std::log(schedule.beta(t)) - std::log(schedule.posterior_variance(t));
      g_mix = DenseMatrix(g.rows(), g.cols());
      auto gm = g_mix.values();
      const auto gv = g.values();
      const auto z = step.noise.values();
      const auto var = step.variance.values();
      for (std::size_t k = 0; k < gm.size(); ++k) {
        gm[k] = gv[k] * z[k] * 0.5 * std::sqrt(var[k]) * log_ratio;
      }
    }
    DenseMatrix g_prev = scaled(g, schedule.posterior_xt_coef(t));
    add_scaled(g_prev, denoiser.backward(step.denoiser, g_x0, g_mix.empty() ? nullptr : &g_mix,
                                         grads));
    g = std::move(g_prev);
  }
  return scaled(g, std::sqrt(schedule.gamma_bar(tape.depth)));
}

DiffusionLoss diffusion_loss(const DenseMatrix& x0, const Denoiser& denoiser,
                             const NoiseSchedule& schedule, const Rng& rng,
                             std::span<const std::size_t> row_keys, DenoiserWeights* grads,
                             double grad_scale) {
  check_keys(row_keys, x0.rows());
  const std::size_t n = x0.rows();
  DiffusionLoss result;
  if (n == 0) return result;

  std::vector<std::size_t> steps(n);
  DenseMatrix x_t(n, x0.cols());
  for (std::size_t r = 0; r < n; ++r) {
    Rng row_rng = rng.substream(row_key(row_keys, r));
    steps[r] = 1 + row_rng.uniform_index(schedule.steps());
    const double signal = std::sqrt(schedule.gamma_bar(steps[r]));
    const double noise = std::sqrt(schedule.one_minus_gamma_bar(steps[r]));
    const auto src = x0.row(r);
    auto dst = x_t.row(r);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = signal * src[j] + noise * row_rng.normal();
  }

  Denoiser::Tape tape;
  const auto out = denoiser.forward(x_t, steps, grads != nullptr ? &tape : nullptr);
  const double inv_n = 1.0 / static_cast<double>(n);

  DenseMatrix residual = subtract(out.x0, x0);
  result.reconstruction = frobenius_sq(residual) * inv_n;

  DenseMatrix g_mix;
  DenseMatrix g_x0 = scaled(residual, 2.0 * inv_n * grad_scale);
  if (denoiser.options().learned_variance) {
    if (!(schedule.options().scale > 0.0)) {
      throw ConfigError("learned variance requires a noise scale > 0");
    }
    g_mix = DenseMatrix(n, x0.cols());
    double kl = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t t = steps[r];
      if (t < 2) continue;
      const double post_var = schedule.posterior_variance(t);
      const double log_beta = std::log(schedule.beta(t));
      const double log_post = std::log(post_var);
      const double c0 = schedule.posterior_x0_coef(t);
      const auto mix = out.variance_mix.row(r);
      const auto res = residual.row(r);
      auto gm = g_mix.row(r);
      for (std::size_t j = 0; j < mix.size(); ++j) {
        const double log_var = mix[j] * log_beta + (1.0 - mix[j]) * log_post;
        const double var = std::exp(log_var);
        const double mean_gap_sq = c0 * c0 * res[j] * res[j];
        kl += 0.5 * (log_var - log_post + (post_var + mean_gap_sq) / var - 1.0);
        const double d_logvar = 0.5 * (1.0 - (post_var + mean_gap_sq) / var);
        gm[j] = grad_scale * inv_n * d_logvar * (log_beta - log_post);
        g_x0(r, j) += grad_scale * inv_n * c0 * c0 * res[j] / var;
      }
    }
    result.variance = kl * inv_n;
  }
  result.value = result.reconstruction + result.variance;

  if (grads != nullptr) {
    // x_t is a constant here, so the returned input gradient is discarded.
    denoiser.backward(tape, g_x0, g_mix.empty() ? nullptr : &g_mix, grads);
  }
  return result;
}

}  // namespace diffcl
