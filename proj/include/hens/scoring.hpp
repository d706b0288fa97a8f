#pragma once

// Empirical CRPS family for ensemble forecasts. All scores use the plain
// (not ensemble-size debiased) empirical distribution of the members.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hens::scoring {

/// (1/n) sum |x_i - y| - (1/2n^2) sum_ij |x_i - x_j|, evaluated in
/// O(n log n) through the sorted members.
double crps(std::span<const double> ensemble, double y);

/// crps of the members and the observation censored below at t.
double twcrps(std::span<const double> ensemble, double y, double t);

struct OwScore {
  bool scored = false;           // w(y) = 1{y > t}
  double value = 0.0;            // valid when scored
  bool no_member_above = false;  // y > t but every member <= t; value = |t - y|
  std::size_t members_above = 0;
};

/// CRPS of the members above t against y, for observations above t.
OwScore owcrps(std::span<const double> ensemble, double y, double t);

/// Per-cell scores and cosine-latitude weighted aggregates over a lat x lon
/// grid (cell = lat * n_lon + lon). owCRPS is averaged over scored cells only.
struct ScoreReport {
  std::vector<double> crps;
  std::vector<double> twcrps;
  std::vector<OwScore> owcrps;
  double crps_mean = 0.0;
  double twcrps_mean = 0.0;
  double owcrps_mean = 0.0;
  std::size_t owcrps_cells = 0;
  std::size_t owcrps_no_member_above = 0;
};

/// members: cell-major, n_members values per cell. thresholds: one per cell.
ScoreReport score_grid(std::span<const float> members, std::size_t n_members,
                       std::span<const double> verification, std::span<const double> thresholds,
                       std::size_t n_lat, std::size_t n_lon);

/// Weighted mean of per-cell values using cosine-latitude weights; cells
/// where `include` is zero (if given) are skipped. Returns NaN when no
/// cell carries weight.
double latitude_weighted_mean(std::span<const double> values, std::size_t n_lat,
                              std::size_t n_lon, std::span<const std::uint8_t> include = {});

}  // namespace hens::scoring
