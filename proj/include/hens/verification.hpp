#pragma once

// Climatology-referenced diagnostics of an ensemble against a verifying
// analysis: Z-scores, member counts, best-member error, bootstrap
// confidence intervals, outlier and bust statistics, spread and error.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hens/store.hpp"

namespace hens::verify {

/// Mean and SD per (month, hour of day, lat/lon cell). Undefined entries are
/// NaN. On disk this is a cube with two members (mean plane, SD plane) and
/// 288 lead slots indexed (month - 1) * 24 + hour; the period text goes in
/// the init-time field.
class ClimatologyTable {
 public:
  struct Entry {
    double mean = 0.0;
    double sd = 1.0;
  };

  static constexpr std::uint32_t kSlots = 12 * 24;

  ClimatologyTable(std::uint32_t n_lat, std::uint32_t n_lon, std::string period = {});

  std::uint32_t n_lat() const { return n_lat_; }
  std::uint32_t n_lon() const { return n_lon_; }
  const std::string& period() const { return period_; }

  /// month in 1..12, hour in 0..23. sd must be positive.
  void set(int month, int hour, std::size_t cell, double mean, double sd);
  /// Sets one (month, hour) slot for every cell.
  void set_slot(int month, int hour, std::span<const double> means, std::span<const double> sds);

  /// Throws DataError if the entry is undefined.
  Entry lookup(std::size_t cell, int month, int hour) const;
  bool has(std::size_t cell, int month, int hour) const;

  store::EnsembleCube to_cube(const std::string& variable_name = "clim") const;
  static ClimatologyTable from_cube(const store::EnsembleCube& cube);
  void write(const std::filesystem::path& path) const;
  static ClimatologyTable read(const std::filesystem::path& path);

 private:
  std::size_t index(std::size_t cell, int month, int hour) const;

  std::uint32_t n_lat_;
  std::uint32_t n_lon_;
  std::string period_;
  std::vector<float> mean_;
  std::vector<float> sd_;
};

/// (value - mean) / sd.
double zscore(double value, const ClimatologyTable& clim, std::size_t cell, int month, int hour);
double zscore(double value, const ClimatologyTable::Entry& entry);

/// Number of members whose Z-score is >= z_obs.
std::size_t members_at_least_as_extreme(std::span<const double> ensemble, double z_obs,
                                        const ClimatologyTable::Entry& entry);

// ---------------------------------------------------------------------------

struct ZBins {
  std::vector<double> centers = {0, 1, 2, 3, 4};
  double half_width = 0.25;  // bin k covers [k - w, k + w) in |Z|
};

struct BestMemberCurve {
  double center = 0.0;
  std::size_t n_cells = 0;
  std::vector<std::size_t> sizes;
  std::vector<double> mean;  // mean over reps of the bin RMSE
  std::vector<double> lo;    // 2.5th percentile over reps
  std::vector<double> hi;    // 97.5th percentile over reps
};

struct BestMemberResult {
  std::vector<BestMemberCurve> curves;
  std::vector<double> skipped_bins;  // centers of bins without cells
};

/// For each rep one random member order is drawn (RngStream(seed, r)) and the
/// size-n sample is its first n members, so samples are nested across sizes.
/// Per cell the smallest |member - verification| over the sample is taken;
/// the bin value is the root mean square of these over cells whose |Z| falls
/// in the bin. `zscores` holds the verification Z of every cell.
BestMemberResult best_member_rmse(const store::EnsembleField& field,
                                  std::span<const double> verification,
                                  std::span<const double> zscores,
                                  std::span<const std::size_t> sizes, std::size_t reps,
                                  std::uint64_t seed, const ZBins& bins = {});

struct CiWidth {
  double probability = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

/// Fraction of members above t and the 2.5 / 97.5 nearest-rank percentiles of
/// that fraction over `reps` with-replacement resamples of the ensemble.
CiWidth extreme_ci_width(std::span<const double> ensemble, double t, std::size_t reps,
                         std::uint64_t seed);

enum class OutlierMode { classic, bootstrap95 };

/// Latitude-weighted fraction of cells whose verification falls outside the
/// ensemble range, per size. classic: each rep takes n members without
/// replacement and the fraction is averaged over reps. bootstrap95: per
/// cell, `reps` resamples of n members are drawn with replacement; the cell
/// is an outlier unless at least 95% of them bracket the verification.
std::vector<double> outlier_statistic(const store::EnsembleField& field,
                                      std::span<const double> verification,
                                      std::span<const std::size_t> sizes, std::size_t reps,
                                      std::uint64_t seed, OutlierMode mode);

struct BustMatrix {
  double both_capture = 0.0;
  double a_bust_only = 0.0;
  double b_bust_only = 0.0;
  double both_bust = 0.0;
};

/// A cell is a bust for an ensemble when its verification exceeds the
/// ensemble maximum on the warm side (verification Z > 0). Fractions are
/// latitude weighted over all cells.
BustMatrix bust_confusion(const store::EnsembleField& a, std::span<const double> verif_a,
                          std::span<const double> z_a, const store::EnsembleField& b,
                          std::span<const double> verif_b, std::span<const double> z_b);

struct SpreadError {
  double spread = 0.0;  // sqrt of the latitude-weighted mean ensemble variance
  double rmse = 0.0;    // of the ensemble mean
  double ratio = 0.0;   // spread * sqrt((n+1)/n) / rmse when adjusted
  bool ratio_infinite = false;
};

SpreadError spread_error(const store::EnsembleField& field, std::span<const double> verification,
                         bool adjust = true);

}  // namespace hens::verify
