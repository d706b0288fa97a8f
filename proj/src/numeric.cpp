#include "hens/numeric.hpp"

#include <charconv>

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/distributions/normal.hpp>

#include "hens/error.hpp"

namespace hens {

double pairwise_sum(std::span<const double> values) noexcept {
  const std::size_t n = values.size();
  if (n <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double mean(std::span<const double> values) {
  if (values.empty()) throw UsageError("mean of an empty sample");
  return pairwise_sum(values) / static_cast<double>(values.size());
}

double variance(std::span<const double> values) {
  if (values.size() < 2) throw UsageError("variance needs at least two values");
  const double m = mean(values);
  std::vector<double> sq(values.size());
  std::transform(values.begin(), values.end(), sq.begin(),
                 [m](double v) { return (v - m) * (v - m); });
  return pairwise_sum(sq) / static_cast<double>(values.size() - 1);
}

double stddev(std::span<const double> values) { return std::sqrt(variance(values)); }

double population_stddev(std::span<const double> values) {
  if (values.empty()) throw UsageError("spread of an empty sample");
  const double m = mean(values);
  std::vector<double> sq(values.size());
  std::transform(values.begin(), values.end(), sq.begin(),
                 [m](double v) { return (v - m) * (v - m); });
  return std::sqrt(pairwise_sum(sq) / static_cast<double>(values.size()));
}

std::size_t nearest_rank(std::size_t n, double alpha) {
  if (n == 0) throw UsageError("percentile of an empty sample");
  const double r = std::floor(static_cast<double>(n) * alpha + 0.5);
  if (r < 1.0) return 1;
  if (r > static_cast<double>(n)) return n;
  return static_cast<std::size_t>(r);
}

double percentile_nearest_rank(std::span<double> values, double alpha) {
  const std::size_t j = nearest_rank(values.size(), alpha);
  auto it = values.begin() + static_cast<std::ptrdiff_t>(j - 1);
  std::nth_element(values.begin(), it, values.end());
  return *it;
}

double percentile_linear(std::span<double> values, double alpha) {
  if (values.empty()) throw UsageError("percentile of an empty sample");
  const double h = static_cast<double>(values.size() - 1) * alpha;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  auto it = values.begin() + static_cast<std::ptrdiff_t>(lo);
  std::nth_element(values.begin(), it, values.end());
  const double x_lo = *it;
  if (lo + 1 >= values.size()) return x_lo;
  const double x_hi = *std::min_element(it + 1, values.end());
  return x_lo + (h - static_cast<double>(lo)) * (x_hi - x_lo);
}

double percentile(std::span<double> values, double alpha, PercentileRule rule) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("percentile level must lie in (0, 1)");
  return rule == PercentileRule::nearest_rank ? percentile_nearest_rank(values, alpha)
                                              : percentile_linear(values, alpha);
}

double normal_pdf(double x) noexcept {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_upper_tail(double x) noexcept { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw UsageError("normal quantile needs p in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

std::vector<double> latitude_weights(std::size_t n_lat) {
  std::vector<double> w(n_lat, 1.0);
  if (n_lat < 2) return w;
  for (std::size_t i = 0; i < n_lat; ++i) {
    const double lat = 90.0 - 180.0 * static_cast<double>(i) / static_cast<double>(n_lat - 1);
    w[i] = std::fabs(lat) == 90.0 ? 0.0 : std::cos(lat * std::numbers::pi / 180.0);
  }
  return w;
}

std::string shortest_repr(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace hens
