#include "hens/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hens/error.hpp"
#include "hens/numeric.hpp"
#include "hens/parallel.hpp"

namespace hens::scoring {
namespace {

double crps_sorted(std::span<const double> x, double y) {
  const std::size_t n = x.size();
  const double nn = static_cast<double>(n);
  double abs_err = 0.0;
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    abs_err += std::abs(x[i] - y);
    spread += (2.0 * static_cast<double>(i + 1) - nn - 1.0) * x[i];
  }
  return std::max(0.0, abs_err / nn - spread / (nn * nn));
}

}  // namespace

double crps(std::span<const double> ensemble, double y) {
  if (ensemble.empty()) throw UsageError("CRPS of an empty ensemble");
  std::vector<double> x(ensemble.begin(), ensemble.end());
  std::sort(x.begin(), x.end());
  return crps_sorted(x, y);
}

double twcrps(std::span<const double> ensemble, double y, double t) {
  if (ensemble.empty()) throw UsageError("CRPS of an empty ensemble");
  std::vector<double> x(ensemble.size());
  std::transform(ensemble.begin(), ensemble.end(), x.begin(),
                 [t](double v) { return std::max(v, t); });
  std::sort(x.begin(), x.end());
  return crps_sorted(x, std::max(y, t));
}

OwScore owcrps(std::span<const double> ensemble, double y, double t) {
  if (ensemble.empty()) throw UsageError("CRPS of an empty ensemble");
  OwScore s;
  std::vector<double> above;
  for (double v : ensemble)
    if (v > t) above.push_back(v);
  s.members_above = above.size();
  if (!(y > t)) return s;
  s.scored = true;
  if (above.empty()) {
    s.no_member_above = true;
    s.value = std::abs(t - y);
    return s;
  }
  std::sort(above.begin(), above.end());
  s.value = crps_sorted(above, y);
  return s;
}

double latitude_weighted_mean(std::span<const double> values, std::size_t n_lat,
                              std::size_t n_lon, std::span<const std::uint8_t> include) {
  if (values.size() != n_lat * n_lon) throw UsageError("value grid does not match lat x lon");
  if (!include.empty() && include.size() != values.size())
    throw UsageError("mask does not match lat x lon");
  const auto w = latitude_weights(n_lat);
  std::vector<double> num(values.size(), 0.0), den(values.size(), 0.0);
  for (std::size_t c = 0; c < values.size(); ++c) {
    if (!include.empty() && include[c] == 0) continue;
    num[c] = w[c / n_lon] * values[c];
    den[c] = w[c / n_lon];
  }
  const double total = pairwise_sum(den);
  if (!(total > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return pairwise_sum(num) / total;
}

ScoreReport score_grid(std::span<const float> members, std::size_t n_members,
                       std::span<const double> verification, std::span<const double> thresholds,
                       std::size_t n_lat, std::size_t n_lon) {
  const std::size_t n_cells = n_lat * n_lon;
  if (n_members == 0 || members.size() != n_cells * n_members)
    throw UsageError("member grid does not match lat x lon x members");
  if (verification.size() != n_cells || thresholds.size() != n_cells)
    throw UsageError("verification or threshold grid does not match lat x lon");
  ScoreReport r;
  r.crps.resize(n_cells);
  r.twcrps.resize(n_cells);
  r.owcrps.resize(n_cells);
  parallel_for(n_cells, [&](std::size_t c) {
    std::vector<double> x(members.begin() + static_cast<std::ptrdiff_t>(c * n_members),
                          members.begin() + static_cast<std::ptrdiff_t>((c + 1) * n_members));
    r.crps[c] = crps(x, verification[c]);
    r.twcrps[c] = twcrps(x, verification[c], thresholds[c]);
    r.owcrps[c] = owcrps(x, verification[c], thresholds[c]);
  });
  r.crps_mean = latitude_weighted_mean(r.crps, n_lat, n_lon);
  r.twcrps_mean = latitude_weighted_mean(r.twcrps, n_lat, n_lon);
  std::vector<double> ow(n_cells, 0.0);
  std::vector<std::uint8_t> scored(n_cells, 0);
  for (std::size_t c = 0; c < n_cells; ++c) {
    if (!r.owcrps[c].scored) continue;
    ow[c] = r.owcrps[c].value;
    scored[c] = 1;
    ++r.owcrps_cells;
    if (r.owcrps[c].no_member_above) ++r.owcrps_no_member_above;
  }
  r.owcrps_mean = latitude_weighted_mean(ow, n_lat, n_lon, scored);
  return r;
}

}  // namespace hens::scoring
