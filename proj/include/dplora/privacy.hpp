#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dplora/errors.hpp"
#include "dplora/matrix.hpp"
#include "dplora/rng.hpp"

namespace dplora {

struct PrivacySpent {
  double eps = 0.0;
  double delta = 0.0;
};

namespace detail {

inline void check_eps(double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw ParamError("privacy: eps must be finite and positive");
  }
}

inline void check_delta(double delta) {
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw ParamError("privacy: delta must lie in (0, 1)");
  }
}

inline void check_rate(double q) {
  if (!(q > 0.0) || !(q < 1.0)) {
    throw ParamError("privacy: sampling rate q must lie in (0, 1)");
  }
}

inline void check_steps(std::uint64_t steps) {
  if (steps == 0) throw ParamError("privacy: step count must be positive");
}

inline void check_rho(double rho) {
  if (!(rho > 0.0) || !(rho <= 1.0)) {
    throw ParamError("privacy: rho_bar must lie in (0, 1]");
  }
}

}  // namespace detail

// L2 norm of the aggregation weight vector; the effective-noise denominator
// under weighted averaging. Weights must form a probability vector.
inline double rho_bar(const std::vector<double>& weights) {
  if (weights.empty()) throw ParamError("rho_bar: empty weight vector");
  double sum = 0.0, sq = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ParamError("rho_bar: weights must be finite and nonnegative");
    }
    sum += w;
    sq += w * w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ParamError("rho_bar: weights must sum to 1 (got " + std::to_string(sum) + ")");
  }
  return std::sqrt(sq);
}

// --- clipping and noising ----------------------------------------------------

// Rescale g to Frobenius norm at most c: g / max(1, |g| / c). The scale is
// nudged down by ulps until the recomputed norm actually satisfies the bound,
// so the invariant holds exactly in 64-bit arithmetic, not just on paper.
template <std::floating_point T>
Mat<T> clip_gradient(const Mat<T>& g, double c) {
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw ParamError("clip_gradient: clip bound must be finite and positive");
  }
  if (!all_finite(g)) throw ParamError("clip_gradient: non-finite gradient entry");
  const double norm = frobenius_norm(g);
  if (norm <= c) return g;
  double scale = c / norm;
  Mat<T> out(g.rows(), g.cols());
  for (;;) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      out.data()[i] = static_cast<T>(static_cast<double>(g.data()[i]) * scale);
    }
    if (frobenius_norm(out) <= c) return out;
    scale = std::nextafter(scale, 0.0);
  }
}

// Clip to c, then add i.i.d. N(0, (sigma * c)^2) noise. sigma = 0 degrades to
// plain clipping and consumes no randomness.
template <std::floating_point T>
Mat<T> gaussian_mechanism(const Mat<T>& g, double c, double sigma, Rng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ParamError("gaussian_mechanism: sigma must be finite and nonnegative");
  }
  Mat<T> out = clip_gradient(g, c);
  if (sigma > 0.0) {
    for (auto& v : out.data()) {
      v += static_cast<T>(sigma * c * rng.next_gaussian());
    }
  }
  return out;
}

// --- closed-form calibration ---------------------------------------------------

// Noise multiplier making one Gaussian-mechanism release (eps, delta)-private:
// sqrt(2 ln(1.25 / delta)) / eps.
inline double sigma_single_step(double eps, double delta) {
  detail::check_eps(eps);
  detail::check_delta(delta);
  return std::sqrt(2.0 * std::log(1.25 / delta)) / eps;
}

// c2 selects between the headline constant and the looser constant carried
// through the composition proof (an extra factor of 2).
enum class CalibrationForm { kTheorem, kProof };

inline double sigma_calibrate_formula(double q, std::uint64_t steps, double eps,
                                      double delta, double rho,
                                      CalibrationForm form = CalibrationForm::kTheorem) {
  detail::check_rate(q);
  detail::check_steps(steps);
  detail::check_eps(eps);
  detail::check_delta(delta);
  detail::check_rho(rho);
  const double c2 = (form == CalibrationForm::kProof) ? 2.0 : 1.0;
  return c2 * q * std::sqrt(static_cast<double>(steps) * std::log(1.0 / delta)) /
         (rho * eps);
}

// --- sequential composition ----------------------------------------------------

// Plain additive composition: eps and delta both sum across releases.
inline PrivacySpent sequential_composition(const std::vector<PrivacySpent>& steps) {
  PrivacySpent total;
  for (const auto& s : steps) {
    detail::check_eps(s.eps);
    detail::check_delta(s.delta);
    total.eps += s.eps;
    total.delta += s.delta;
  }
  return total;
}

// Spend after `steps` identical Gaussian releases at noise multiplier sigma,
// splitting the delta budget evenly: per-step delta is delta_total / steps and
// per-step eps inverts the single-step formula.
inline PrivacySpent sequential_from_sigma(double sigma, std::uint64_t steps,
                                          double delta_total) {
  if (!(sigma > 0.0)) throw ParamError("sequential_from_sigma: sigma must be positive");
  detail::check_steps(steps);
  detail::check_delta(delta_total);
  const double delta_step = delta_total / static_cast<double>(steps);
  const double eps_step = std::sqrt(2.0 * std::log(1.25 / delta_step)) / sigma;
  return PrivacySpent{static_cast<double>(steps) * eps_step, delta_total};
}

// --- moments accountant ----------------------------------------------------------

inline constexpr std::uint64_t kMomentsLambdaCap = 512;

// Largest admissible moment order: floor(rho^2 sigma^2 ln(1 / (q sigma))),
// clamped to the cap. Zero means the regime admits no valid order at all.
inline std::uint64_t moments_lambda_max(double q, double sigma, double rho) {
  detail::check_rate(q);
  detail::check_rho(rho);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParamError("moments_lambda_max: sigma must be finite and positive");
  }
  if (q * sigma >= 1.0) return 0;
  const double raw = rho * rho * sigma * sigma * std::log(1.0 / (q * sigma));
  if (!(raw >= 1.0)) return 0;
  const double floored = std::floor(raw);
  return floored >= static_cast<double>(kMomentsLambdaCap)
             ? kMomentsLambdaCap
             : static_cast<std::uint64_t>(floored);
}

// Log moment bound for one subsampled Gaussian release:
//   alpha(lambda) = q^2 lambda (lambda + 1) / ((1 - q) rho^2 sigma^2).
// Outside its regime (q >= 1/(16 sigma) or lambda out of range) the question
// has no trustworthy answer and the call refuses rather than extrapolating.
inline double moments_alpha(double q, double sigma, double rho, std::uint64_t lambda) {
  detail::check_rate(q);
  detail::check_rho(rho);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParamError("moments_alpha: sigma must be finite and positive");
  }
  if (!(q < 1.0 / (16.0 * sigma))) {
    throw RegimeError("moments_alpha: requires q < 1/(16 sigma); got q=" +
                      std::to_string(q) + ", sigma=" + std::to_string(sigma));
  }
  const std::uint64_t lmax = moments_lambda_max(q, sigma, rho);
  if (lambda < 1 || lambda > lmax) {
    throw RegimeError("moments_alpha: lambda " + std::to_string(lambda) +
                      " outside valid range [1, " + std::to_string(lmax) + "]");
  }
  const double lam = static_cast<double>(lambda);
  return q * q * lam * (lam + 1.0) / ((1.0 - q) * rho * rho * sigma * sigma);
}

// Composed epsilon at fixed delta: minimize (steps * alpha(lambda) +
// ln(1/delta)) / lambda over the valid integer orders.
inline double moments_epsilon(double q, double sigma, double rho, std::uint64_t steps,
                              double delta) {
  detail::check_steps(steps);
  detail::check_delta(delta);
  const std::uint64_t lmax = moments_lambda_max(q, sigma, rho);
  if (lmax < 1) {
    throw RegimeError("moments_epsilon: no valid moment order for q=" +
                      std::to_string(q) + ", sigma=" + std::to_string(sigma) +
                      ", rho_bar=" + std::to_string(rho));
  }
  if (!(q < 1.0 / (16.0 * sigma))) {
    throw RegimeError("moments_epsilon: requires q < 1/(16 sigma)");
  }
  const double log_inv_delta = std::log(1.0 / delta);
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t lambda = 1; lambda <= lmax; ++lambda) {
    const double alpha = moments_alpha(q, sigma, rho, lambda);
    const double eps =
        (static_cast<double>(steps) * alpha + log_inv_delta) / static_cast<double>(lambda);
    if (eps < best) best = eps;
  }
  return best;
}

inline constexpr double kSigmaGridStep = 1e-4;

// Smallest sigma on the 1e-4 grid whose moments-accountant epsilon meets the
// target. Scans upward; grid points whose regime is invalid are skipped, and
// hitting the q < 1/(16 sigma) ceiling without a solution is an error.
inline double sigma_calibrate_numeric(double q, std::uint64_t steps, double delta,
                                      double rho, double eps_target) {
  detail::check_rate(q);
  detail::check_steps(steps);
  detail::check_delta(delta);
  detail::check_rho(rho);
  detail::check_eps(eps_target);
  const double sigma_ceiling = 1.0 / (16.0 * q);
  for (std::uint64_t k = 1;; ++k) {
    const double sigma = static_cast<double>(k) * kSigmaGridStep;
    if (!(sigma < sigma_ceiling)) {
      throw RegimeError(
          "sigma_calibrate_numeric: no grid sigma below the q < 1/(16 sigma) "
          "ceiling reaches eps <= " +
          std::to_string(eps_target));
    }
    if (moments_lambda_max(q, sigma, rho) < 1) continue;
    if (moments_epsilon(q, sigma, rho, steps, delta) <= eps_target) return sigma;
  }
}

}  // namespace dplora
