#include <dplora/privacy.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

using dplora::CalibrationForm;
using dplora::Matrix;
using dplora::Rng;

namespace {
constexpr double kInvSqrt5 = 0.4472135954999579;  // 1/sqrt(5)

Matrix random_matrix(std::size_t rows, std::size_t cols, dplora::Rng& rng,
                     double magnitude) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = magnitude * (2.0 * rng.next_uniform() - 1.0);
  return m;
}
}  // namespace

TEST(Clip, HandValues) {
  Matrix g{{3.0}, {4.0}};  // norm 5
  Matrix out = dplora::clip_gradient(g, 2.5);
  EXPECT_DOUBLE_EQ(out(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(out(1, 0), 2.0);
}

TEST(Clip, IdentityBelowBound) {
  Matrix g{{0.3, -0.4}};  // norm 0.5
  Matrix out = dplora::clip_gradient(g, 0.5);  // boundary counts as within
  EXPECT_EQ(out, g);
  out = dplora::clip_gradient(g, 10.0);
  EXPECT_EQ(out, g);
}

TEST(Clip, NormNeverExceedsBound) {
  Rng rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t rows = 1 + rng.next_below(8);
    const std::size_t cols = 1 + rng.next_below(8);
    const double mag = std::pow(10.0, 6.0 * rng.next_uniform() - 2.0);
    Matrix g = random_matrix(rows, cols, rng, mag);
    const double c = std::pow(10.0, 4.0 * rng.next_uniform() - 2.0);
    Matrix clipped = dplora::clip_gradient(g, c);
    EXPECT_LE(dplora::frobenius_norm(clipped), c) << "trial " << trial;
    if (dplora::frobenius_norm(g) <= c) EXPECT_EQ(clipped, g);
  }
}

TEST(Clip, RejectsBadInput) {
  Matrix g{{1.0}};
  EXPECT_THROW(dplora::clip_gradient(g, 0.0), dplora::ParamError);
  EXPECT_THROW(dplora::clip_gradient(g, -1.0), dplora::ParamError);
  EXPECT_THROW(dplora::clip_gradient(g, std::numeric_limits<double>::infinity()),
               dplora::ParamError);
  Matrix bad{{std::numeric_limits<double>::quiet_NaN()}};
  EXPECT_THROW(dplora::clip_gradient(bad, 1.0), dplora::ParamError);
}

TEST(Mechanism, ZeroSigmaIsPlainClipping) {
  Rng rng(7);
  Rng probe(7);
  Matrix g{{30.0, -40.0}};
  Matrix out = dplora::gaussian_mechanism(g, 5.0, 0.0, rng);
  EXPECT_EQ(out, dplora::clip_gradient(g, 5.0));
  // No randomness consumed.
  EXPECT_EQ(rng.next_u64(), probe.next_u64());
}

TEST(Mechanism, NoiseStatistics) {
  // Clipped zero gradient isolates the noise: entries must be N(0, (sigma c)^2).
  Rng rng(99);
  const double sigma = 2.0, c = 10.0;
  const std::size_t n = 200;
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (int rep = 0; rep < 50; ++rep) {
    Matrix z(n / 10, 10);
    Matrix noisy = dplora::gaussian_mechanism(z, c, sigma, rng);
    for (double v : noisy.data()) {
      sum += v;
      sq += v * v;
      ++count;
    }
  }
  const double mean = sum / count;
  const double std = std::sqrt(sq / count - mean * mean);
  EXPECT_NEAR(mean, 0.0, 3.0 * sigma * c / std::sqrt(static_cast<double>(count)));
  EXPECT_NEAR(std, sigma * c, 0.01 * sigma * c);
}

TEST(Mechanism, RejectsNegativeSigma) {
  Rng rng(1);
  Matrix g{{1.0}};
  EXPECT_THROW(dplora::gaussian_mechanism(g, 1.0, -0.5, rng), dplora::ParamError);
}

// Frozen values below were computed with an independent reimplementation of
// each formula and pinned before the library code was written.

TEST(Calibration, SingleStepFrozenValues) {
  EXPECT_DOUBLE_EQ(dplora::sigma_single_step(2.0, 1e-5), 2.4224026313026945);
  EXPECT_DOUBLE_EQ(dplora::sigma_single_step(1.0, 1e-5), 4.844805262605389);
  EXPECT_THROW(dplora::sigma_single_step(0.0, 1e-5), dplora::ParamError);
  EXPECT_THROW(dplora::sigma_single_step(1.0, 0.0), dplora::ParamError);
  EXPECT_THROW(dplora::sigma_single_step(1.0, 1.0), dplora::ParamError);
}

TEST(Calibration, FormulaFrozenValues) {
  EXPECT_DOUBLE_EQ(
      dplora::sigma_calibrate_formula(0.01, 1000, 2.0, 1e-5, kInvSqrt5),
      1.1996314780470203);
  EXPECT_DOUBLE_EQ(dplora::sigma_calibrate_formula(0.01, 1000, 2.0, 1e-5, kInvSqrt5,
                                                   CalibrationForm::kProof),
                   2.3992629560940406);
  EXPECT_DOUBLE_EQ(
      dplora::sigma_calibrate_formula(0.01, 10000, 2.0, 1e-5, kInvSqrt5),
      3.793567823462866);
}

TEST(Calibration, ProofFormDoublesTheorem) {
  const double t = dplora::sigma_calibrate_formula(0.004, 300, 1.5, 1e-6, 0.7);
  const double p = dplora::sigma_calibrate_formula(0.004, 300, 1.5, 1e-6, 0.7,
                                                   CalibrationForm::kProof);
  EXPECT_DOUBLE_EQ(p, 2.0 * t);
}

TEST(Calibration, FormulaDomainChecks) {
  EXPECT_THROW(dplora::sigma_calibrate_formula(0.0, 10, 1.0, 1e-5, 1.0),
               dplora::ParamError);
  EXPECT_THROW(dplora::sigma_calibrate_formula(1.5, 10, 1.0, 1e-5, 1.0),
               dplora::ParamError);
  EXPECT_THROW(dplora::sigma_calibrate_formula(0.01, 0, 1.0, 1e-5, 1.0),
               dplora::ParamError);
  EXPECT_THROW(dplora::sigma_calibrate_formula(0.01, 10, 1.0, 1e-5, 0.0),
               dplora::ParamError);
  EXPECT_THROW(dplora::sigma_calibrate_formula(0.01, 10, 1.0, 1e-5, 1.5),
               dplora::ParamError);
}

TEST(RhoBar, EqualWeights) {
  std::vector<double> w(5, 0.2);
  EXPECT_NEAR(dplora::rho_bar(w), kInvSqrt5, 1e-12);
  EXPECT_DOUBLE_EQ(dplora::rho_bar({1.0}), 1.0);
}

TEST(RhoBar, RejectsNonSimplex) {
  EXPECT_THROW(dplora::rho_bar({0.5, 0.4}), dplora::ParamError);
  EXPECT_THROW(dplora::rho_bar({0.5, 0.6}), dplora::ParamError);
  EXPECT_THROW(dplora::rho_bar({1.5, -0.5}), dplora::ParamError);
  EXPECT_THROW(dplora::rho_bar({}), dplora::ParamError);
}

TEST(Sequential, SumsAcrossSteps) {
  std::vector<dplora::PrivacySpent> steps{{0.5, 1e-6}, {0.25, 2e-6}, {0.25, 1e-6}};
  dplora::PrivacySpent total = dplora::sequential_composition(steps);
  EXPECT_DOUBLE_EQ(total.eps, 1.0);
  EXPECT_DOUBLE_EQ(total.delta, 4e-6);

  dplora::PrivacySpent empty = dplora::sequential_composition({});
  EXPECT_EQ(empty.eps, 0.0);
  EXPECT_EQ(empty.delta, 0.0);

  EXPECT_THROW(dplora::sequential_composition({{-1.0, 1e-6}}), dplora::ParamError);
}

TEST(Sequential, FromSigmaFrozenValues) {
  dplora::PrivacySpent s = dplora::sequential_from_sigma(2.0, 50, 1e-5);
  EXPECT_DOUBLE_EQ(s.eps, 139.85748112682685);
  EXPECT_DOUBLE_EQ(s.delta, 1e-5);

  dplora::PrivacySpent t = dplora::sequential_from_sigma(4.0, 1000, 1e-5);
  EXPECT_DOUBLE_EQ(t.eps, 1526.5903304122955);

  EXPECT_THROW(dplora::sequential_from_sigma(0.0, 10, 1e-5), dplora::ParamError);
}

TEST(Moments, LambdaMax) {
  EXPECT_EQ(dplora::moments_lambda_max(0.01, 4.0, 1.0), 51u);
  // q * sigma >= 1 admits no order at all.
  EXPECT_EQ(dplora::moments_lambda_max(0.5, 3.0, 1.0), 0u);
  // Huge budgets clamp to the cap.
  EXPECT_EQ(dplora::moments_lambda_max(1e-6, 100.0, 1.0), dplora::kMomentsLambdaCap);
}

TEST(Moments, AlphaFrozenValue) {
  EXPECT_DOUBLE_EQ(dplora::moments_alpha(0.01, 4.0, 1.0, 10), 0.0006944444444444444);
}

TEST(Moments, AlphaRegimeGuards) {
  // q >= 1/(16 sigma) is outside the bound's validity.
  EXPECT_THROW(dplora::moments_alpha(0.05, 2.0, 1.0, 1), dplora::RegimeError);
  // lambda above the admissible ceiling.
  EXPECT_THROW(dplora::moments_alpha(0.01, 4.0, 1.0, 52), dplora::RegimeError);
  EXPECT_THROW(dplora::moments_alpha(0.01, 4.0, 1.0, 0), dplora::RegimeError);
  EXPECT_THROW(dplora::moments_alpha(0.0, 4.0, 1.0, 1), dplora::ParamError);
}

TEST(Moments, EpsilonFrozenValues) {
  EXPECT_DOUBLE_EQ(dplora::moments_epsilon(0.01, 4.0, 1.0, 1000, 1e-5),
                   0.545520230451504);
  EXPECT_DOUBLE_EQ(dplora::moments_epsilon(0.01, 2.0, kInvSqrt5, 1000, 1e-5),
                   4.342692326707248);
  EXPECT_DOUBLE_EQ(dplora::moments_epsilon(0.02, 2.0, kInvSqrt5, 50, 1e-5),
                   5.832993344730013);
}

TEST(Moments, EpsilonMatchesExhaustiveSweep) {
  // The accountant must equal a literal scan over every admissible order.
  Rng rng(31337);
  int checked = 0;
  while (checked < 50) {
    const double q = 1e-4 + 0.03 * rng.next_uniform();
    const double sigma = 0.8 + 7.2 * rng.next_uniform();
    const double rho = 0.3 + 0.7 * rng.next_uniform();
    const std::uint64_t steps = 10 + rng.next_below(100000);
    const double delta = 1e-5;
    if (!(q < 1.0 / (16.0 * sigma))) continue;
    if (dplora::moments_lambda_max(q, sigma, rho) < 1) continue;

    const std::uint64_t lmax = dplora::moments_lambda_max(q, sigma, rho);
    double best = std::numeric_limits<double>::infinity();
    for (std::uint64_t lam = 1; lam <= lmax; ++lam) {
      const double alpha =
          q * q * static_cast<double>(lam) * (static_cast<double>(lam) + 1.0) /
          ((1.0 - q) * rho * rho * sigma * sigma);
      const double eps =
          (static_cast<double>(steps) * alpha + std::log(1.0 / delta)) /
          static_cast<double>(lam);
      if (eps < best) best = eps;
    }
    EXPECT_EQ(dplora::moments_epsilon(q, sigma, rho, steps, delta), best);
    ++checked;
  }
}

TEST(Moments, TighterThanSequentialComposition) {
  // On identical inputs the moments bound must not exceed plain summation.
  for (double sigma : {1.0, 2.0, 4.0}) {
    const double q = 0.01;
    const std::uint64_t steps = 500;
    const double delta = 1e-5;
    const double m = dplora::moments_epsilon(q, sigma, 1.0, steps, delta);
    const double s = dplora::sequential_from_sigma(sigma, steps, delta).eps;
    EXPECT_LT(m, s) << "sigma " << sigma;
  }
}

TEST(Moments, EpsilonRegimeErrors) {
  EXPECT_THROW(dplora::moments_epsilon(0.05, 2.0, 1.0, 10, 1e-5), dplora::RegimeError);
  EXPECT_THROW(dplora::moments_epsilon(0.01, 0.5, 0.3, 10, 1e-5), dplora::RegimeError);
}

TEST(NumericCalibration, FrozenValue) {
  EXPECT_DOUBLE_EQ(dplora::sigma_calibrate_numeric(0.01, 1000, 1e-5, 1.0, 2.0), 1.365);
}

TEST(NumericCalibration, RoundTripProperty) {
  // The returned grid point meets the target; the previous one does not.
  const double q = 0.01;
  const std::uint64_t steps = 1000;
  const double delta = 1e-5;
  const double target = 2.0;
  const double sigma = dplora::sigma_calibrate_numeric(q, steps, delta, 1.0, target);
  EXPECT_LE(dplora::moments_epsilon(q, sigma, 1.0, steps, delta), target);
  const double prev = sigma - dplora::kSigmaGridStep;
  EXPECT_GT(dplora::moments_epsilon(q, prev, 1.0, steps, delta), target);
}

TEST(NumericCalibration, UnreachableTargetIsError) {
  // Ceiling sits at 1/(16 q) = 1.25; nothing under it reaches eps = 0.001.
  EXPECT_THROW(dplora::sigma_calibrate_numeric(0.05, 100, 1e-5, 1.0, 0.001),
               dplora::RegimeError);
}
