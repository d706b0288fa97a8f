#pragma once

// Information gain G_n = max_i |X_i - mean| / S_n, the largest standardized
// departure of any member from the ensemble mean.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hens/estimate.hpp"
#include "hens/store.hpp"

namespace hens::gain {

/// Requires n >= 2 (UsageError) and S_n > 0 (NumericError).
double empirical_gain(std::span<const double> sample);

enum class Sampling { without_replacement, with_replacement };

/// Mean of empirical_gain over `reps` random size-n draws from `pool`;
/// mc_uncertainty is the SD over reps (divisor reps). Rep r uses
/// RngStream(seed, r).
StatEstimate expected_gain_mc(std::span<const double> pool, std::size_t n, std::size_t reps,
                              std::uint64_t seed,
                              Sampling sampling = Sampling::without_replacement);

/// E[G_n] for iid standard normal data with known mean and SD:
/// integral of x * 2n phi(x) (2 Phi(x) - 1)^(n-1) over [0, inf).
double gaussian_expected_gain(std::size_t n);

struct GainMap {
  store::CellGrid gain;
  std::size_t zero_variance_cells = 0;
};

/// empirical_gain of every cell of an analysis-order cube. Cells with zero
/// spread are NaN and counted.
GainMap gain_map(const store::CubeReader& src);

/// Latitude-weighted spatial mean of each member at one lead. A non-empty
/// mask (n_lat * n_lon, nonzero = include) restricts the cells averaged.
std::vector<double> spatial_mean_series(const store::CubeReader& src, std::uint32_t lead,
                                        std::span<const float> mask = {});

}  // namespace hens::gain
