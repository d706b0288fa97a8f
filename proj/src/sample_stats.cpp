#include "hens/sample_stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "hens/error.hpp"
#include "hens/parallel.hpp"
#include "hens/rng.hpp"

namespace hens::stats {

double mean_uncertainty(double sigma, std::size_t n) {
  if (n == 0) throw UsageError("sample size must be positive");
  if (sigma < 0.0) throw UsageError("sigma must be nonnegative");
  return sigma / std::sqrt(static_cast<double>(n));
}

double sd_uncertainty(double sigma, std::size_t n) {
  if (n < 2) throw UsageError("SD uncertainty needs n >= 2");
  if (sigma < 0.0) throw UsageError("sigma must be nonnegative");
  const double nn = static_cast<double>(n);
  double bracket;
  if (n > 10000) {
    // n - 1 - 2 (Gamma(x + 1/2) / Gamma(x))^2 with x = (n - 1) / 2, expanded in 1/x.
    const double x = 0.5 * (nn - 1.0);
    bracket = 0.5 - 1.0 / (16.0 * x) - 1.0 / (64.0 * x * x) + 5.0 / (1024.0 * x * x * x);
  } else {
    const double ratio_sq = std::exp(2.0 * (std::lgamma(0.5 * nn) - std::lgamma(0.5 * (nn - 1.0))));
    bracket = nn - 1.0 - 2.0 * ratio_sq;
  }
  return sigma * std::sqrt(bracket / nn);
}

namespace {

double log_normal_cdf(double z) { return std::log(normal_cdf(z)); }
double log_normal_upper(double z) { return std::log(normal_upper_tail(z)); }

struct OrderStatMoments {
  double mass = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

// Moments of the j-th of n standard normal order statistics.
OrderStatMoments order_stat_moments(std::size_t j, std::size_t n, double log_coeff) {
  const double jm1 = static_cast<double>(j - 1);
  const double nmj = static_cast<double>(n - j);
  auto density = [&](double z) {
    double lg = log_coeff - 0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
    if (jm1 > 0.0) lg += jm1 * log_normal_cdf(z);
    if (nmj > 0.0) lg += nmj * log_normal_upper(z);
    return std::exp(lg);
  };

  // Breakpoints spread geometrically around the approximate location.
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(j) / (nn + 1.0);
  const double z0 = std::clamp(normal_quantile(p), -11.0, 11.0);
  const double w = std::max(
      1e-6, std::sqrt(p * (1.0 - p) / (nn + 2.0)) / std::max(normal_pdf(z0), 1e-300));
  std::vector<double> cuts = {-12.0, 12.0};
  for (double k = 1.0; k * w < 24.0; k *= 2.0) {
    for (double c : {z0 - k * w, z0 + k * w})
      if (c > -12.0 && c < 12.0) cuts.push_back(c);
  }
  cuts.push_back(z0);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  auto integrate = [&](auto&& f) {
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      double err = 0.0;
      total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
          f, cuts[k], cuts[k + 1], 15, 1e-10, &err);
    }
    return total;
  };
  OrderStatMoments m;
  m.mass = integrate(density);
  m.mean = integrate([&](double z) { return z * density(z); }) / m.mass;
  m.variance =
      integrate([&](double z) { return (z - m.mean) * (z - m.mean) * density(z); }) / m.mass;
  return m;
}

double log_binomial_coeff(std::size_t n, std::size_t j, bool direct) {
  const double nn = static_cast<double>(n);
  const double jj = static_cast<double>(j);
  if (direct) {
    const double c = std::tgamma(nn + 1.0) / (std::tgamma(jj) * std::tgamma(nn - jj + 1.0));
    if (!std::isfinite(c) || !(c > 0.0))
      throw NumericError("order-statistic coefficient n!/((j-1)!(n-j)!) overflows for n=" +
                         std::to_string(n) + "; use the CLT percentile uncertainty");
    return std::log(c);
  }
  return std::lgamma(nn + 1.0) - std::lgamma(jj) - std::lgamma(nn - jj + 1.0);
}

OrderStatMoments checked_moments(double alpha, std::size_t n, const ExactPercentileOptions& opt) {
  if (n == 0) throw UsageError("sample size must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("percentile level must lie in (0, 1)");
  const std::size_t j = nearest_rank(n, alpha);
  const auto m = order_stat_moments(j, n, log_binomial_coeff(n, j, opt.direct_factorial));
  if (!std::isfinite(m.mass) || std::abs(m.mass - 1.0) > 1e-6 || !(m.variance >= 0.0))
    throw NumericError("order-statistic density for n=" + std::to_string(n) +
                       " does not integrate to one; use the CLT percentile uncertainty");
  return m;
}

}  // namespace

double percentile_uncertainty_exact(double alpha, std::size_t n, const Gaussian& dist,
                                    const ExactPercentileOptions& options) {
  return dist.sigma * std::sqrt(checked_moments(alpha, n, options).variance);
}

double percentile_expectation_exact(double alpha, std::size_t n, const Gaussian& dist) {
  return dist.mu + dist.sigma * checked_moments(alpha, n, {}).mean;
}

double percentile_uncertainty_clt(double alpha, std::size_t n, const Gaussian& dist) {
  if (n == 0) throw UsageError("sample size must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("percentile level must lie in (0, 1)");
  const double density = normal_pdf(normal_quantile(alpha)) / dist.sigma;
  if (!(density > 0.0)) throw NumericError("zero density at the requested percentile");
  return std::sqrt(alpha * (1.0 - alpha)) / (std::sqrt(static_cast<double>(n)) * density);
}

Statistic Statistic::parse(const std::string& text) {
  Statistic s;
  if (text == "mean") {
    s.kind = Kind::mean;
  } else if (text == "std") {
    s.kind = Kind::std;
  } else if (text.rfind("p:", 0) == 0) {
    s.kind = Kind::percentile;
    try {
      std::size_t used = 0;
      s.alpha = std::stod(text.substr(2), &used);
      if (used != text.size() - 2) throw std::invalid_argument(text);
    } catch (const std::exception&) {
      throw UsageError("bad percentile level in '" + text + "'");
    }
    if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw UsageError("percentile level must lie in (0, 1)");
  } else {
    throw UsageError("unknown statistic '" + text + "' (mean|std|p:<alpha>)");
  }
  return s;
}

std::string Statistic::name() const {
  if (kind == Kind::mean) return "mean";
  if (kind == Kind::std) return "std";
  return "p:" + shortest_repr(alpha);
}

double evaluate(std::span<double> sample, const Statistic& stat, PercentileRule rule) {
  switch (stat.kind) {
    case Statistic::Kind::mean: return mean(sample);
    case Statistic::Kind::std: return stddev(sample);
    case Statistic::Kind::percentile: return percentile(sample, stat.alpha, rule);
  }
  return 0.0;
}

double analytic_uncertainty(const Statistic& stat, std::size_t n, const Gaussian& dist) {
  switch (stat.kind) {
    case Statistic::Kind::mean: return mean_uncertainty(dist.sigma, n);
    case Statistic::Kind::std: return sd_uncertainty(dist.sigma, n);
    case Statistic::Kind::percentile: return percentile_uncertainty_clt(stat.alpha, n, dist);
  }
  return 0.0;
}

StatEstimate bootstrap_statistic(std::span<const double> pool, const Statistic& stat,
                                 std::size_t n, std::size_t reps, std::uint64_t seed,
                                 PercentileRule rule) {
  if (pool.empty()) throw UsageError("empty pool");
  if (n == 0 || reps == 0) throw UsageError("sample size and reps must be positive");
  if (stat.kind == Statistic::Kind::std && n < 2) throw UsageError("std needs n >= 2");
  std::vector<double> values(reps);
  parallel_for(reps, [&](std::size_t r) {
    RngStream rng(seed, r);
    std::vector<double> draw(n);
    for (auto& x : draw) x = pool[rng.below(pool.size())];
    values[r] = evaluate(draw, stat, rule);
  });
  StatEstimate est;
  est.statistic = stat.name();
  est.n = n;
  est.value = mean(values);
  est.mc_uncertainty = population_stddev(values);
  if (pool.size() >= 2) {
    const Gaussian fit{mean(pool), stddev(pool)};
    if (fit.sigma > 0.0) est.analytic_uncertainty = analytic_uncertainty(stat, n, fit);
  }
  return est;
}

std::vector<NormalizedEstimate> normalize_estimates(std::span<const DateEstimates> dates) {
  if (dates.empty()) throw UsageError("no dates to normalize");
  const std::size_t n_sizes = dates.front().by_size.size();
  std::vector<NormalizedEstimate> out(n_sizes);
  for (const auto& d : dates) {
    if (!(d.full_analytic > 0.0))
      throw NumericError("full-ensemble analytic uncertainty must be positive");
    if (d.by_size.size() != n_sizes) throw UsageError("dates have different size lists");
    for (std::size_t k = 0; k < n_sizes; ++k) {
      const auto& e = d.by_size[k];
      if (k < out.size() && out[k].n != 0 && out[k].n != e.n)
        throw UsageError("dates have different size lists");
      out[k].n = e.n;
      out[k].bias += (e.value - d.full_value) / d.full_analytic;
      out[k].mc_uncertainty += e.mc_uncertainty / d.full_analytic;
      out[k].analytic_uncertainty += e.analytic_uncertainty.value_or(0.0) / d.full_analytic;
    }
  }
  const double count = static_cast<double>(dates.size());
  for (auto& o : out) {
    o.bias /= count;
    o.mc_uncertainty /= count;
    o.analytic_uncertainty /= count;
  }
  return out;
}

}  // namespace hens::stats
