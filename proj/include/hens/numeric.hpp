#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hens {

/// Pairwise (tree) summation: ranges of at most 8 values are summed left to
/// right, longer ranges are split at n/2 and the halves added. The order is
/// fixed by the input order alone.
double pairwise_sum(std::span<const double> values) noexcept;

/// Arithmetic mean via pairwise_sum.
double mean(std::span<const double> values);

/// Sample variance with divisor n-1 (two-pass, both passes pairwise).
double variance(std::span<const double> values);

/// Sample standard deviation with divisor n-1.
double stddev(std::span<const double> values);

/// Standard deviation with divisor n, as used for Monte Carlo spreads over reps.
double population_stddev(std::span<const double> values);

/// 1-based rank j = clamp(nearest-integer(n*alpha), 1, n); halves round up.
std::size_t nearest_rank(std::size_t n, double alpha);

/// Order statistic X_(nearest_rank(n, alpha)). Reorders `values`.
double percentile_nearest_rank(std::span<double> values, double alpha);

/// Linear interpolation between order statistics at position (n-1)*alpha
/// (Hyndman-Fan type 7). Reorders `values`.
double percentile_linear(std::span<double> values, double alpha);

enum class PercentileRule { nearest_rank, linear };

double percentile(std::span<double> values, double alpha, PercentileRule rule);

/// Standard normal density, distribution and quantile.
double normal_pdf(double x) noexcept;
double normal_cdf(double x) noexcept;
double normal_upper_tail(double x) noexcept;
double normal_quantile(double p);

/// Shortest decimal text that reads back as the same double.
std::string shortest_repr(double v);

/// Cosine-latitude weights for a regular grid spanning 90N..90S inclusive
/// (first row at 90N). A single row gets weight 1.
std::vector<double> latitude_weights(std::size_t n_lat);

}  // namespace hens
