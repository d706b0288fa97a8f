#include "hens/gain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "hens/error.hpp"
#include "hens/numeric.hpp"
#include "hens/parallel.hpp"
#include "hens/rng.hpp"

namespace hens::gain {

double empirical_gain(std::span<const double> sample) {
  if (sample.size() < 2) throw UsageError("information gain needs at least two values");
  const double m = mean(sample);
  const double s = stddev(sample);
  if (!(s > 0.0)) throw NumericError("information gain undefined for a zero-variance sample");
  double worst = 0.0;
  for (double x : sample) worst = std::max(worst, std::abs(x - m));
  return worst / s;
}

StatEstimate expected_gain_mc(std::span<const double> pool, std::size_t n, std::size_t reps,
                              std::uint64_t seed, Sampling sampling) {
  if (n < 2) throw UsageError("sample size must be at least 2");
  if (sampling == Sampling::without_replacement && n > pool.size())
    throw UsageError("sample size exceeds the pool");
  if (reps == 0) throw UsageError("reps must be positive");
  StatEstimate est;
  est.statistic = "gain";
  est.n = n;
  if (sampling == Sampling::without_replacement && n == pool.size()) {
    // Every draw is a permutation of the pool.
    est.value = empirical_gain(pool);
    return est;
  }
  std::vector<double> gains(reps);
  parallel_for(reps, [&](std::size_t r) {
    RngStream rng(seed, r);
    std::vector<double> draw(n);
    if (sampling == Sampling::with_replacement) {
      for (auto& x : draw) x = pool[rng.below(pool.size())];
    } else {
      std::vector<std::uint32_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), 0u);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t pick = k + rng.below(idx.size() - k);
        std::swap(idx[k], idx[pick]);
        draw[k] = pool[idx[k]];
      }
    }
    gains[r] = empirical_gain(draw);
  });
  est.value = mean(gains);
  est.mc_uncertainty = population_stddev(gains);
  return est;
}

double gaussian_expected_gain(std::size_t n) {
  if (n == 0) throw UsageError("ensemble size must be at least 1");
  if (n == 1) return std::sqrt(2.0 / std::numbers::pi);
  const double nn = static_cast<double>(n);
  const double log_scale = std::log(2.0 * nn) - 0.5 * std::log(2.0 * std::numbers::pi);
  auto integrand = [&](double x) {
    if (x <= 0.0) return 0.0;
    const double log_cdf = std::log1p(-std::erfc(x / std::numbers::sqrt2));
    return x * std::exp(log_scale - 0.5 * x * x + (nn - 1.0) * log_cdf);
  };
  const double upper = 10.0 + std::sqrt(2.0 * std::log(nn));
  // Split at the mode region so the adaptive rule sees the peak.
  const double peak = std::sqrt(2.0 * std::log(nn));
  const double cuts[] = {0.0, std::max(0.0, peak - 2.0), peak, peak + 2.0, upper};
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < std::size(cuts); ++k) {
    if (cuts[k + 1] <= cuts[k]) continue;
    double err = 0.0;
    total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        integrand, cuts[k], cuts[k + 1], 15, 1e-12, &err);
  }
  return total;
}

GainMap gain_map(const store::CubeReader& src) {
  const auto d = src.dims();
  if (src.header().order != store::AxisOrder::analysis)
    throw UsageError("gain map needs an analysis-order cube");
  if (d.n_ensemble < 2) throw UsageError("gain map needs at least two members");
  GainMap out;
  out.gain = {d.n_lead, d.n_lat, d.n_lon, std::vector<double>(d.cell_count())};
  const auto spec = src.chunks();
  std::vector<std::size_t> zero_counts(spec.chunk_count, 0);
  parallel_for(spec.chunk_count, [&](std::size_t chunk) {
    std::vector<float> buf(spec.chunk_elements);
    std::vector<double> members(d.n_ensemble);
    src.read_chunk(chunk, buf);
    for (std::uint32_t lon = 0; lon < d.n_lon; ++lon) {
      for (std::uint32_t e = 0; e < d.n_ensemble; ++e)
        members[e] = buf[static_cast<std::size_t>(e) * d.n_lon + lon];
      double g;
      try {
        g = empirical_gain(members);
      } catch (const NumericError&) {
        g = std::numeric_limits<double>::quiet_NaN();
        ++zero_counts[chunk];
      }
      out.gain.values[chunk * d.n_lon + lon] = g;
    }
  });
  for (auto c : zero_counts) out.zero_variance_cells += c;
  return out;
}

std::vector<double> spatial_mean_series(const store::CubeReader& src, std::uint32_t lead,
                                        std::span<const float> mask) {
  const auto d = src.dims();
  const std::size_t plane = std::size_t{d.n_lat} * d.n_lon;
  if (!mask.empty() && mask.size() != plane)
    throw UsageError("mask does not match the cube's lat x lon grid");
  const auto lat_w = latitude_weights(d.n_lat);
  std::vector<double> weights(plane);
  for (std::size_t c = 0; c < plane; ++c)
    weights[c] = (mask.empty() || mask[c] != 0.0f) ? lat_w[c / d.n_lon] : 0.0;
  const double wsum = pairwise_sum(weights);
  if (!(wsum > 0.0)) throw DataError("mask selects no cells with positive weight");

  std::vector<double> series(d.n_ensemble);
  parallel_for(d.n_ensemble, [&](std::size_t e) {
    auto field = load_member_field(src, static_cast<std::uint32_t>(e), lead);
    for (std::size_t c = 0; c < plane; ++c) field[c] *= weights[c];
    series[e] = pairwise_sum(field) / wsum;
  });
  return series;
}

}  // namespace hens::gain
