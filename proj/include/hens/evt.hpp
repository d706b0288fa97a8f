#pragma once

// Peaks-over-threshold tail model. Excesses y = x - u of values above u
// follow a generalized Pareto distribution with scale sigma_g and shape xi;
// theta_u is the probability of exceeding u.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "hens/estimate.hpp"

namespace hens::evt {

struct GpdFit {
  double u = 0.0;
  double sigma = 1.0;
  double xi = 0.0;
  double theta = 1.0;
  // Covariance of (sigma, xi, theta), row-major. The (sigma, xi) block is the
  // inverse observed information; theta has binomial variance theta(1-theta)/n
  // and is uncorrelated with the other two.
  std::array<double, 9> cov{};
  std::size_t n_exceed = 0;
  std::size_t n_total = 0;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  // Shape estimate sits on the search bound (-0.9 or 2); asymptotics are suspect.
  bool at_shape_bound = false;
};

inline constexpr std::size_t kMinExceedances = 30;

/// GPD log-likelihood of the excesses y (all > 0).
double gpd_log_likelihood(std::span<const double> excesses, double sigma, double xi);

/// Maximum likelihood fit to the values of `sample` strictly above u.
/// Throws DataError with fewer than kMinExceedances exceedances and
/// NumericError if the optimizer does not converge.
GpdFit gpd_fit(std::span<const double> sample, double u);

/// 100 alpha percentile u + (sigma/xi)((theta/(1-alpha))^xi - 1); the xi = 0
/// form u + sigma log(theta/(1-alpha)) is used when |xi| < 1e-6.
double gpd_percentile(const GpdFit& fit, double alpha);

/// True when 1 - alpha < theta, i.e. alpha lies inside the modelled tail.
bool in_modelled_tail(const GpdFit& fit, double alpha);

/// Gradient of gpd_percentile with respect to (sigma, xi, theta).
std::array<double, 3> gpd_percentile_gradient(const GpdFit& fit, double alpha);

/// Delta-method standard error sqrt(grad' V grad).
double gpd_percentile_se(const GpdFit& fit, double alpha);

/// Threshold choice per sample: the nearest-rank `quantile` of the sample,
/// lowered if needed until at least `min_exceedances` values lie above it.
struct ThresholdRule {
  double quantile = 0.9;
  std::size_t min_exceedances = kMinExceedances;

  double choose(std::span<const double> sample) const;
};

/// Over `reps` size-n resamples of `pool` drawn with replacement: value is
/// the mean percentile estimate, analytic_uncertainty the mean delta-method
/// SE, mc_uncertainty the SD of the estimates (divisor = successful reps).
/// Reps whose fit fails are dropped and counted in failed_reps.
StatEstimate evt_percentile_mc(std::span<const double> pool, std::size_t n, double alpha,
                               std::size_t reps, std::uint64_t seed,
                               const ThresholdRule& u_rule = {});

}  // namespace hens::evt
