#include "hens/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hens/error.hpp"
#include "hens/numeric.hpp"
#include "hens/parallel.hpp"
#include "hens/rng.hpp"
#include "hens/scoring.hpp"

namespace hens::verify {
namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

void check_slot(int month, int hour) {
  if (month < 1 || month > 12) throw UsageError("month must be in 1..12");
  if (hour < 0 || hour > 23) throw UsageError("hour must be in 0..23");
}

void check_cells(const store::EnsembleField& f, std::span<const double> per_cell,
                 const char* what) {
  if (per_cell.size() != f.n_cells())
    throw UsageError(std::string(what) + " grid does not match the ensemble grid");
}

std::vector<double> cell_weights(const store::EnsembleField& f) {
  const auto lat = latitude_weights(f.n_lat);
  std::vector<double> w(f.n_cells());
  for (std::size_t c = 0; c < w.size(); ++c) w[c] = lat[c / f.n_lon];
  return w;
}

double weighted_fraction(std::span<const double> w, std::span<const std::uint8_t> flag) {
  std::vector<double> num(w.size());
  for (std::size_t c = 0; c < w.size(); ++c) num[c] = flag[c] ? w[c] : 0.0;
  return pairwise_sum(num) / pairwise_sum(w);
}

}  // namespace

ClimatologyTable::ClimatologyTable(std::uint32_t n_lat, std::uint32_t n_lon, std::string period)
    : n_lat_(n_lat), n_lon_(n_lon), period_(std::move(period)) {
  if (n_lat == 0 || n_lon == 0) throw UsageError("climatology grid must be nonempty");
  const std::size_t n = std::size_t{kSlots} * n_lat * n_lon;
  mean_.assign(n, kNaN);
  sd_.assign(n, kNaN);
}

std::size_t ClimatologyTable::index(std::size_t cell, int month, int hour) const {
  check_slot(month, hour);
  if (cell >= std::size_t{n_lat_} * n_lon_) throw UsageError("cell index out of range");
  const std::size_t slot = static_cast<std::size_t>((month - 1) * 24 + hour);
  return slot * n_lat_ * n_lon_ + cell;
}

void ClimatologyTable::set(int month, int hour, std::size_t cell, double mean, double sd) {
  if (!(sd > 0.0) || !std::isfinite(mean)) throw UsageError("climatology SD must be positive");
  const auto i = index(cell, month, hour);
  mean_[i] = static_cast<float>(mean);
  sd_[i] = static_cast<float>(sd);
}

void ClimatologyTable::set_slot(int month, int hour, std::span<const double> means,
                                std::span<const double> sds) {
  const std::size_t cells = std::size_t{n_lat_} * n_lon_;
  if (means.size() != cells || sds.size() != cells)
    throw UsageError("climatology slot does not match the grid");
  for (std::size_t c = 0; c < cells; ++c) set(month, hour, c, means[c], sds[c]);
}

bool ClimatologyTable::has(std::size_t cell, int month, int hour) const {
  const auto i = index(cell, month, hour);
  return !std::isnan(mean_[i]) && sd_[i] > 0.0f;
}

ClimatologyTable::Entry ClimatologyTable::lookup(std::size_t cell, int month, int hour) const {
  const auto i = index(cell, month, hour);
  if (std::isnan(mean_[i]) || !(sd_[i] > 0.0f))
    throw DataError("no climatology for cell " + std::to_string(cell) + " month " +
                    std::to_string(month) + " hour " + std::to_string(hour));
  return {mean_[i], sd_[i]};
}

store::EnsembleCube ClimatologyTable::to_cube(const std::string& variable_name) const {
  auto cube = store::EnsembleCube::zeros({2, kSlots, n_lat_, n_lon_}, store::AxisOrder::gen,
                                         variable_name, period_);
  std::copy(mean_.begin(), mean_.end(), cube.values.begin());
  std::copy(sd_.begin(), sd_.end(), cube.values.begin() + static_cast<std::ptrdiff_t>(mean_.size()));
  return cube;
}

ClimatologyTable ClimatologyTable::from_cube(const store::EnsembleCube& cube) {
  const auto& d = cube.header.dims;
  if (d.n_ensemble != 2 || d.n_lead != kSlots)
    throw DataError("climatology cube must have 2 planes and 288 month-hour slots");
  ClimatologyTable t(d.n_lat, d.n_lon, cube.header.init_time);
  for (std::uint32_t slot = 0; slot < kSlots; ++slot)
    for (std::uint32_t la = 0; la < d.n_lat; ++la)
      for (std::uint32_t lo = 0; lo < d.n_lon; ++lo) {
        const std::size_t i = (std::size_t{slot} * d.n_lat + la) * d.n_lon + lo;
        t.mean_[i] = cube.at(0, slot, la, lo);
        t.sd_[i] = cube.at(1, slot, la, lo);
      }
  return t;
}

void ClimatologyTable::write(const std::filesystem::path& path) const {
  store::write_cube(to_cube(), path);
}

ClimatologyTable ClimatologyTable::read(const std::filesystem::path& path) {
  return from_cube(store::read_cube(path));
}

double zscore(double value, const ClimatologyTable::Entry& e) { return (value - e.mean) / e.sd; }

double zscore(double value, const ClimatologyTable& clim, std::size_t cell, int month, int hour) {
  return zscore(value, clim.lookup(cell, month, hour));
}

std::size_t members_at_least_as_extreme(std::span<const double> ensemble, double z_obs,
                                        const ClimatologyTable::Entry& entry) {
  return static_cast<std::size_t>(std::count_if(
      ensemble.begin(), ensemble.end(), [&](double x) { return zscore(x, entry) >= z_obs; }));
}

// ---------------------------------------------------------------------------

BestMemberResult best_member_rmse(const store::EnsembleField& field,
                                  std::span<const double> verification,
                                  std::span<const double> zscores,
                                  std::span<const std::size_t> sizes, std::size_t reps,
                                  std::uint64_t seed, const ZBins& bins) {
  check_cells(field, verification, "verification");
  check_cells(field, zscores, "Z-score");
  if (sizes.empty() || reps == 0) throw UsageError("sizes and reps must be nonempty");
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] == 0 || sizes[k] > field.n_members)
      throw UsageError("ensemble sizes must lie in 1..n_members");
    if (k > 0 && sizes[k] <= sizes[k - 1]) throw UsageError("sizes must be strictly increasing");
  }
  const std::size_t n_bins = bins.centers.size();
  std::vector<std::vector<std::size_t>> bin_cells(n_bins);
  for (std::size_t c = 0; c < field.n_cells(); ++c) {
    const double az = std::abs(zscores[c]);
    for (std::size_t b = 0; b < n_bins; ++b)
      if (az >= bins.centers[b] - bins.half_width && az < bins.centers[b] + bins.half_width)
        bin_cells[b].push_back(c);
  }

  const std::size_t n_sizes = sizes.size();
  const std::size_t max_size = sizes.back();
  // result[r][b * n_sizes + s]
  std::vector<std::vector<double>> result(reps, std::vector<double>(n_bins * n_sizes, 0.0));
  parallel_for(reps, [&](std::size_t r) {
    RngStream rng(seed, r);
    std::vector<std::uint32_t> order(field.n_members);
    std::iota(order.begin(), order.end(), 0u);
    for (std::size_t k = 0; k < max_size; ++k)
      std::swap(order[k], order[k + rng.below(order.size() - k)]);
    auto& out = result[r];
    std::vector<double> sq(n_sizes);
    for (std::size_t b = 0; b < n_bins; ++b) {
      if (bin_cells[b].empty()) continue;
      std::vector<std::vector<double>> per_size(n_sizes);
      for (std::size_t c : bin_cells[b]) {
        const auto x = field.cell(c);
        double best = std::numeric_limits<double>::infinity();
        std::size_t s = 0;
        for (std::size_t k = 0; k < max_size; ++k) {
          best = std::min(best, std::abs(static_cast<double>(x[order[k]]) - verification[c]));
          if (k + 1 == sizes[s]) per_size[s++].push_back(best * best);
        }
      }
      for (std::size_t s = 0; s < n_sizes; ++s) out[b * n_sizes + s] = std::sqrt(mean(per_size[s]));
    }
  });

  BestMemberResult res;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (bin_cells[b].empty()) {
      res.skipped_bins.push_back(bins.centers[b]);
      continue;
    }
    BestMemberCurve curve;
    curve.center = bins.centers[b];
    curve.n_cells = bin_cells[b].size();
    curve.sizes.assign(sizes.begin(), sizes.end());
    std::vector<double> vals(reps);
    for (std::size_t s = 0; s < n_sizes; ++s) {
      for (std::size_t r = 0; r < reps; ++r) vals[r] = result[r][b * n_sizes + s];
      curve.mean.push_back(mean(vals));
      curve.lo.push_back(percentile_nearest_rank(vals, 0.025));
      curve.hi.push_back(percentile_nearest_rank(vals, 0.975));
    }
    res.curves.push_back(std::move(curve));
  }
  return res;
}

CiWidth extreme_ci_width(std::span<const double> ensemble, double t, std::size_t reps,
                         std::uint64_t seed) {
  if (ensemble.empty()) throw UsageError("empty ensemble");
  if (reps == 0) throw UsageError("reps must be positive");
  const std::size_t n = ensemble.size();
  const double nn = static_cast<double>(n);
  CiWidth ci;
  ci.probability = static_cast<double>(std::count_if(ensemble.begin(), ensemble.end(),
                                                     [t](double x) { return x > t; })) /
                   nn;
  std::vector<double> frac(reps);
  parallel_for(reps, [&](std::size_t r) {
    RngStream rng(seed, r);
    std::size_t above = 0;
    for (std::size_t k = 0; k < n; ++k) above += ensemble[rng.below(n)] > t ? 1 : 0;
    frac[r] = static_cast<double>(above) / nn;
  });
  ci.lo = percentile_nearest_rank(frac, 0.025);
  ci.hi = percentile_nearest_rank(frac, 0.975);
  return ci;
}

std::vector<double> outlier_statistic(const store::EnsembleField& field,
                                      std::span<const double> verification,
                                      std::span<const std::size_t> sizes, std::size_t reps,
                                      std::uint64_t seed, OutlierMode mode) {
  check_cells(field, verification, "verification");
  if (reps == 0) throw UsageError("reps must be positive");
  for (auto n : sizes)
    if (n == 0 || n > field.n_members) throw UsageError("ensemble sizes must lie in 1..n_members");
  const std::size_t n_cells = field.n_cells();
  const auto w = cell_weights(field);
  std::vector<double> out;

  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const std::size_t n = sizes[si];
    if (mode == OutlierMode::classic) {
      std::vector<double> per_rep(reps);
      for (std::size_t r = 0; r < reps; ++r) {
        RngStream rng(seed, si * reps + r);
        std::vector<std::uint32_t> order(field.n_members);
        std::iota(order.begin(), order.end(), 0u);
        for (std::size_t k = 0; k < n; ++k) std::swap(order[k], order[k + rng.below(order.size() - k)]);
        std::vector<std::uint8_t> outside(n_cells);
        parallel_for(n_cells, [&](std::size_t c) {
          const auto x = field.cell(c);
          double lo = std::numeric_limits<double>::infinity(), hi = -lo;
          for (std::size_t k = 0; k < n; ++k) {
            lo = std::min(lo, static_cast<double>(x[order[k]]));
            hi = std::max(hi, static_cast<double>(x[order[k]]));
          }
          outside[c] = verification[c] < lo || verification[c] > hi;
        });
        per_rep[r] = weighted_fraction(w, outside);
      }
      out.push_back(mean(per_rep));
    } else {
      const std::size_t need = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(reps)));
      std::vector<std::uint8_t> outlier(n_cells);
      parallel_for(n_cells, [&](std::size_t c) {
        const auto x = field.cell(c);
        const double y = verification[c];
        std::size_t contained = 0, missed = 0;
        for (std::size_t r = 0; r < reps; ++r) {
          RngStream rng(seed, (si * n_cells + c) * reps + r);
          bool up = false, down = false;
          for (std::size_t k = 0; k < n && !(up && down); ++k) {
            const double v = x[rng.below(field.n_members)];
            up = up || v >= y;
            down = down || v <= y;
          }
          if (up && down) ++contained; else ++missed;
          if (contained >= need || missed > reps - need) break;
        }
        outlier[c] = contained < need;
      });
      out.push_back(weighted_fraction(w, outlier));
    }
  }
  return out;
}

BustMatrix bust_confusion(const store::EnsembleField& a, std::span<const double> verif_a,
                          std::span<const double> z_a, const store::EnsembleField& b,
                          std::span<const double> verif_b, std::span<const double> z_b) {
  if (a.n_lat != b.n_lat || a.n_lon != b.n_lon) throw DataError("ensemble grids differ");
  check_cells(a, verif_a, "verification A");
  check_cells(a, z_a, "Z-score A");
  check_cells(b, verif_b, "verification B");
  check_cells(b, z_b, "Z-score B");
  const std::size_t n_cells = a.n_cells();
  auto busts = [n_cells](const store::EnsembleField& f, std::span<const double> v,
                         std::span<const double> z) {
    std::vector<std::uint8_t> flag(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c) {
      const auto x = f.cell(c);
      const double mx = *std::max_element(x.begin(), x.end());
      flag[c] = z[c] > 0.0 && v[c] > mx;
    }
    return flag;
  };
  const auto fa = busts(a, verif_a, z_a);
  const auto fb = busts(b, verif_b, z_b);
  const auto w = cell_weights(a);
  std::vector<std::uint8_t> k00(n_cells), k10(n_cells), k01(n_cells), k11(n_cells);
  for (std::size_t c = 0; c < n_cells; ++c) {
    k00[c] = !fa[c] && !fb[c];
    k10[c] = fa[c] && !fb[c];
    k01[c] = !fa[c] && fb[c];
    k11[c] = fa[c] && fb[c];
  }
  return {weighted_fraction(w, k00), weighted_fraction(w, k10), weighted_fraction(w, k01),
          weighted_fraction(w, k11)};
}

SpreadError spread_error(const store::EnsembleField& field, std::span<const double> verification,
                         bool adjust) {
  check_cells(field, verification, "verification");
  if (field.n_members < 2) throw UsageError("spread needs at least two members");
  const std::size_t n_cells = field.n_cells();
  std::vector<double> var(n_cells), sq_err(n_cells);
  parallel_for(n_cells, [&](std::size_t c) {
    const auto x = field.cell(c);
    std::vector<double> v(x.begin(), x.end());
    const double m = mean(v);
    var[c] = variance(v);
    sq_err[c] = (m - verification[c]) * (m - verification[c]);
  });
  SpreadError r;
  r.spread = std::sqrt(scoring::latitude_weighted_mean(var, field.n_lat, field.n_lon));
  r.rmse = std::sqrt(scoring::latitude_weighted_mean(sq_err, field.n_lat, field.n_lon));
  const double nn = static_cast<double>(field.n_members);
  const double factor = adjust ? std::sqrt((nn + 1.0) / nn) : 1.0;
  if (r.rmse == 0.0) {
    r.ratio = std::numeric_limits<double>::infinity();
    r.ratio_infinite = true;
  } else {
    r.ratio = r.spread * factor / r.rmse;
  }
  return r;
}

}  // namespace hens::verify
