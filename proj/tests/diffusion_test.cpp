#include <cmath>

#include <gtest/gtest.h>

#include "diffcl/diffusion.hpp"
#include "diffcl/error.hpp"
#include "diffcl/grad_check.hpp"
#include "oracles.hpp"

namespace diffcl {
namespace {

std::vector<CheckedTensor> checked(DenoiserWeights& value, DenoiserWeights& grad) {
  auto v = named_tensors(value, "");
  auto g = named_tensors(grad, "");
  std::vector<CheckedTensor> out;
  for (std::size_t k = 0; k < v.size(); ++k) out.push_back({v[k].first, v[k].second, g[k].second});
  return out;
}

void randomize(Denoiser& d, Rng& rng, double scale = 0.5) {
  for (auto& [name, m] : named_tensors(d.weights(), "")) {
    for (double& v : m->values()) v = scale * rng.normal();
  }
}

TEST(ScheduleTest, EndpointsExact) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 2 + rng.uniform_index(50);
    const double s = rng.uniform();
    const double lo = 1e-4 + 0.1 * rng.uniform();
    const double hi = lo + (0.99 - lo) * (0.01 + 0.98 * rng.uniform());
    const auto sched = build_schedule(T, s, lo, hi);
    EXPECT_EQ(sched.one_minus_gamma_bar(1), s * lo);
    EXPECT_EQ(sched.one_minus_gamma_bar(T), s * hi);
    EXPECT_NEAR(1.0 - sched.gamma_bar(1), s * lo, 1e-15);
    for (std::size_t t = 2; t <= T; ++t) EXPECT_LE(sched.gamma_bar(t), sched.gamma_bar(t - 1));
  }
}

TEST(ScheduleTest, StepProductsRecoverGammaBar) {
  const auto sched = build_schedule(6, 0.5, 0.01, 0.2);
  double prod = 1.0;
  for (std::size_t t = 1; t <= 6; ++t) {
    prod *= sched.gamma(t);
    EXPECT_NEAR(prod, sched.gamma_bar(t), 1e-14);
  }
}

TEST(ScheduleTest, InvalidOptionsRejected) {
  EXPECT_THROW(build_schedule(1, 0.1, 1e-3, 1e-2), ConfigError);
  EXPECT_THROW(build_schedule(5, 0.1, 1e-2, 1e-3), ConfigError);
  EXPECT_THROW(build_schedule(5, 1.5, 1e-3, 1e-2), ConfigError);
}

TEST(QSampleTest, ZeroScaleIsIdentity) {
  const auto sched = build_schedule(5, 0.0, 1e-3, 1e-2);
  Rng rng(2);
  const DenseMatrix x0 = oracle::random_matrix(4, 3, rng);
  EXPECT_EQ(q_sample(x0, 5, sched, Rng(3)), x0);
}

TEST(QSampleTest, MomentsWithinThreeSigma) {
  // 1 - gamma_bar_T = 0.04.
  const auto sched = build_schedule(4, 0.5, 0.02, 0.08);
  ASSERT_NEAR(sched.gamma_bar(4), 0.96, 1e-15);
  const std::size_t n = 10000;
  const double x0_value = 1.5;
  const DenseMatrix x0(n, 1, x0_value);
  const DenseMatrix xt = q_sample(x0, 4, sched, Rng(4));
  double mean = 0, sq = 0;
  for (double v : xt.values()) mean += v;
  mean /= n;
  for (double v : xt.values()) sq += (v - mean) * (v - mean);
  const double var = sq / (n - 1);
  const double expect_var = 0.04;
  EXPECT_LE(std::abs(mean - std::sqrt(0.96) * x0_value), 3 * std::sqrt(expect_var / n));
  EXPECT_LE(std::abs(var - expect_var), 3 * expect_var * std::sqrt(2.0 / (n - 1)));
}

TEST(QSampleTest, RowKeysMakeRowsBatchInvariant) {
  const auto sched = build_schedule(5, 0.1, 1e-3, 1e-2);
  Rng rng(5);
  const DenseMatrix x0 = oracle::random_matrix(5, 2, rng);
  const std::vector<std::size_t> keys{10, 11, 12, 13, 14};
  const DenseMatrix full = q_sample(x0, 3, sched, Rng(6), keys);
  const std::vector<std::size_t> idx{3, 1};
  const std::vector<std::size_t> sub_keys{13, 11};
  const DenseMatrix part = q_sample(gather_rows(x0, idx), 3, sched, Rng(6), sub_keys);
  EXPECT_EQ(part, gather_rows(full, idx));
}

TEST(ReverseStepTest, PerfectDenoiserAtStepOneRecoversX0) {
  const auto sched = build_schedule(5, 0.3, 1e-3, 1e-2);
  Rng rng(7);
  const DenseMatrix x0 = oracle::random_matrix(3, 4, rng);
  const DenseMatrix x1 = q_sample(x0, 1, sched, Rng(8));
  const X0Predictor perfect = [&](const DenseMatrix&, std::size_t) { return X0Prediction{x0, {}}; };
  EXPECT_LT(max_abs_diff(reverse_step(x1, 1, perfect, sched, Rng(9)), x0), 1e-15);
}

TEST(ReverseStepTest, ZeroWeightsMatchPosteriorMeanFormula) {
  const auto sched = build_schedule(5, 0.3, 1e-3, 1e-2);
  DenoiserOptions o;
  o.dim = 3;
  o.hidden = 4;
  o.time_dim = 4;
  o.residual = false;
  Denoiser d(o);
  d.weights().b_out = DenseMatrix{{0.5, -1.0, 2.0}};
  Rng rng(10);
  const DenseMatrix xt = oracle::random_matrix(2, 3, rng);
  const std::size_t t = 3;
  const DenseMatrix out = reverse_step(xt, t, d, sched, Rng(11));

  // Same noise stream: a predictor returning the bias reproduces the draw.
  const X0Predictor bias = [&](const DenseMatrix& x, std::size_t) {
    DenseMatrix b(x.rows(), 3);
    add_row_broadcast(b, d.weights().b_out);
    return X0Prediction{b, {}};
  };
  EXPECT_EQ(out, reverse_step(xt, t, bias, sched, Rng(11)));

  const double c0 = sched.posterior_x0_coef(t), ct = sched.posterior_xt_coef(t);
  const double gb_prev = sched.gamma_bar(t - 1), gb = sched.gamma_bar(t), beta = sched.beta(t);
  EXPECT_NEAR(c0, std::sqrt(gb_prev) * beta / (1 - gb), 1e-12);
  EXPECT_NEAR(ct, std::sqrt(1 - beta) * (1 - gb_prev) / (1 - gb), 1e-12);
  const double sigma = std::sqrt(sched.posterior_variance(t));
  EXPECT_NEAR(sched.posterior_variance(t), (1 - gb_prev) / (1 - gb) * beta, 1e-16);
  // Residual after removing the affine mean is sigma times a standard normal.
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 3; ++j) {
      const double mean = c0 * d.weights().b_out(0, j) + ct * xt(r, j);
      EXPECT_LT(std::abs(out(r, j) - mean), 6 * sigma);
    }
}

TEST(GenerateViewTest, DepthOnePerfectDenoiser) {
  const auto sched = build_schedule(5, 0.1, 1e-3, 1e-2);
  Rng rng(12);
  const DenseMatrix e = oracle::random_matrix(4, 3, rng);
  const X0Predictor perfect = [&](const DenseMatrix&, std::size_t) { return X0Prediction{e, {}}; };
  const DenseMatrix view = generate_view(e, 1, perfect, sched, Rng(13));
  EXPECT_LE(max_abs_diff(view, e), std::sqrt(sched.one_minus_gamma_bar(1)) + 1e-15);
}

TEST(GenerateViewTest, ZeroScaleIdentityPredictor) {
  const auto sched = build_schedule(5, 0.0, 1e-3, 1e-2);
  Rng rng(14);
  const DenseMatrix e = oracle::random_matrix(4, 3, rng);
  const X0Predictor echo = [](const DenseMatrix& x, std::size_t) { return X0Prediction{x, {}}; };
  // The posterior coefficients sum to 1 here, up to rounding.
  EXPECT_LT(max_abs_diff(generate_view(e, 5, echo, sched, Rng(15)), e), 1e-14);
}

TEST(GenerateViewTest, SubstreamsGiveDistinctViews) {
  const auto sched = build_schedule(5, 0.1, 1e-3, 1e-2);
  DenoiserOptions o;
  o.dim = 3;
  o.hidden = 5;
  o.time_dim = 4;
  const Denoiser d = Denoiser::initialized(o, Rng(16));
  Rng rng(17);
  const DenseMatrix e = oracle::random_matrix(4, 3, rng);
  const Rng root(18);
  const DenseMatrix v1 = generate_view(e, 5, d, sched, root.substream(1));
  const DenseMatrix v2 = generate_view(e, 5, d, sched, root.substream(2));
  EXPECT_GT(max_abs_diff(v1, v2), 0.0);
  EXPECT_EQ(v1, generate_view(e, 5, d, sched, root.substream(1)));
}

class ViewGradTest : public ::testing::TestWithParam<bool> {};

TEST_P(ViewGradTest, BackwardMatchesFiniteDifferences) {
  const auto sched = build_schedule(5, 0.3, 1e-3, 2e-2);
  DenoiserOptions o;
  o.dim = 3;
  o.hidden = 4;
  o.time_dim = 4;
  o.learned_variance = GetParam();
  Denoiser d(o);
  Rng rng(19);
  randomize(d, rng);
  DenseMatrix e = oracle::random_matrix(4, 3, rng);
  const DenseMatrix probe = oracle::random_matrix(4, 3, rng);
  const Rng stream(20);
  const auto loss = [&] { return dot(generate_view(e, 4, d, sched, stream).values(), probe.values()); };

  ViewTape tape;
  generate_view(e, 4, d, sched, stream, {}, &tape);
  DenoiserWeights grads = d.zero_weights();
  DenseMatrix g_e = generate_view_backward(tape, d, sched, probe, &grads);

  auto tensors = checked(d.weights(), grads);
  tensors.push_back({"embeddings", &e, &g_e});
  const auto report = grad_check(loss, tensors);
  EXPECT_TRUE(report.passed) << report.worst.tensor << "[" << report.worst.index
                             << "] rel " << report.worst.relative_error;
}

TEST_P(ViewGradTest, DiffusionLossMatchesFiniteDifferences) {
  const auto sched = build_schedule(5, 0.3, 1e-3, 2e-2);
  DenoiserOptions o;
  o.dim = 3;
  o.hidden = 4;
  o.time_dim = 4;
  o.learned_variance = GetParam();
  Denoiser d(o);
  Rng rng(21);
  randomize(d, rng);
  const DenseMatrix x0 = oracle::random_matrix(6, 3, rng);
  const Rng stream(22);
  DenoiserWeights grads = d.zero_weights();
  diffusion_loss(x0, d, sched, stream, {}, &grads, 1.7);
  const auto loss = [&] { return 1.7 * diffusion_loss(x0, d, sched, stream).value; };
  const auto report = grad_check(loss, checked(d.weights(), grads));
  EXPECT_TRUE(report.passed) << report.worst.tensor << "[" << report.worst.index
                             << "] rel " << report.worst.relative_error;
}

INSTANTIATE_TEST_SUITE_P(FixedAndLearnedVariance, ViewGradTest, ::testing::Bool());

TEST(DiffusionLossTest, ThreeParameterToyDenoiser) {
  // Only the output bias is live: with zero weights x0_hat = b_out.
  const auto sched = build_schedule(5, 0.1, 1e-3, 1e-2);
  DenoiserOptions o;
  o.dim = 3;
  o.hidden = 2;
  o.time_dim = 2;
  o.residual = false;
  Denoiser d(o);
  d.weights().b_out = DenseMatrix{{0.1, -0.2, 0.3}};
  const DenseMatrix x0{{1, 0, 0}, {0, 1, 0}};
  DenoiserWeights grads = d.zero_weights();
  diffusion_loss(x0, d, sched, Rng(23), {}, &grads);
  const CheckedTensor tensors[] = {{"b_out", &d.weights().b_out, &grads.b_out}};
  const auto loss = [&] { return diffusion_loss(x0, d, sched, Rng(23)).value; };
  EXPECT_LT(grad_check(loss, tensors).max_relative_error, 1e-4);
}

TEST(DiffusionLossTest, PerfectAndZeroDenoisers) {
  const auto sched = build_schedule(5, 0.1, 1e-3, 1e-2);
  DenoiserOptions o;
  o.dim = 2;
  o.hidden = 3;
  o.time_dim = 2;
  o.residual = false;
  const Denoiser zero(o);
  const DenseMatrix x0{{1, 0}, {0, 1}, {0.6, 0.8}};
  EXPECT_NEAR(diffusion_loss(x0, zero, sched, Rng(24)).value, 1.0, 1e-15);

  // Zero-scale schedule with a residual denoiser: x_t = x0 and x0_hat = x_t.
  o.residual = true;
  const Denoiser echo(o);
  const auto clean = build_schedule(5, 0.0, 1e-3, 1e-2);
  EXPECT_EQ(diffusion_loss(x0, echo, clean, Rng(25)).value, 0.0);
}

}  // namespace
}  // namespace diffcl
