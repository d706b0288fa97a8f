#pragma once

// Sampling uncertainty of ensemble statistics as a function of ensemble size:
// analytic results for Gaussian data, the CLT approximation for percentiles,
// and the bootstrap Monte Carlo used on real ensembles.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hens/estimate.hpp"
#include "hens/numeric.hpp"

namespace hens::stats {

struct Gaussian {
  double mu = 0.0;
  double sigma = 1.0;
};

/// sigma / sqrt(n).
double mean_uncertainty(double sigma, std::size_t n);

/// SD of the (divisor n) sample standard deviation of n Gaussian draws:
/// sigma * sqrt((n - 1 - 2 Gamma(n/2)^2 / Gamma((n-1)/2)^2) / n).
/// Log-gamma for moderate n, an asymptotic series above 10^4; tends to
/// sigma / sqrt(2n).
double sd_uncertainty(double sigma, std::size_t n);

struct ExactPercentileOptions {
  // Evaluate n!/((j-1)!(n-j)!) directly instead of in log space. Overflows
  // for n > 170 and then throws, directing the caller to the CLT formula.
  bool direct_factorial = false;
};

/// SD of the order statistic X_(j), j = nearest_rank(n, alpha), for n draws
/// from `dist`, by quadrature of the order-statistic density.
double percentile_uncertainty_exact(double alpha, std::size_t n, const Gaussian& dist,
                                    const ExactPercentileOptions& options = {});

/// Mean of X_(j) under the same model.
double percentile_expectation_exact(double alpha, std::size_t n, const Gaussian& dist);

/// sqrt(alpha (1 - alpha)) / (sqrt(n) f(F^-1(alpha))).
double percentile_uncertainty_clt(double alpha, std::size_t n, const Gaussian& dist);

struct Statistic {
  enum class Kind { mean, std, percentile };
  Kind kind = Kind::mean;
  double alpha = 0.5;

  /// mean | std | p:<alpha>
  static Statistic parse(const std::string& text);
  std::string name() const;
};

/// Evaluates the statistic on `sample` (reordered for percentiles).
double evaluate(std::span<double> sample, const Statistic& stat,
                PercentileRule rule = PercentileRule::linear);

/// Analytic uncertainty of the statistic at size n for Gaussian data; CLT
/// for percentiles.
double analytic_uncertainty(const Statistic& stat, std::size_t n, const Gaussian& dist);

/// Monte Carlo mean and SD (divisor reps) of the statistic over `reps`
/// size-n resamples of `pool` drawn with replacement. Rep r uses
/// RngStream(seed, r). analytic_uncertainty is filled from the pool's mean
/// and SD.
StatEstimate bootstrap_statistic(std::span<const double> pool, const Statistic& stat,
                                 std::size_t n, std::size_t reps, std::uint64_t seed,
                                 PercentileRule rule = PercentileRule::linear);

/// Estimates for one initialization date, all at the same list of sizes.
struct DateEstimates {
  double full_value = 0.0;     // statistic of the whole ensemble
  double full_analytic = 0.0;  // analytic uncertainty at the whole-ensemble size
  std::vector<StatEstimate> by_size;
};

struct NormalizedEstimate {
  std::size_t n = 0;
  double bias = 0.0;
  double mc_uncertainty = 0.0;
  double analytic_uncertainty = 0.0;
};

/// (value - full_value) / full_analytic and uncertainty / full_analytic,
/// averaged over dates.
std::vector<NormalizedEstimate> normalize_estimates(std::span<const DateEstimates> dates);

}  // namespace hens::stats
