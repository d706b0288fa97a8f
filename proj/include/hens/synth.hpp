#pragma once

// Seeded synthetic ensembles following the one-way random-effects model
//
//   X_ij(cell) = m_i(cell) + tau * z_ij(cell),   m_i(cell) = m + sigma_b * eta_i(cell)
//
// where i is the checkpoint, j the member within it, and eta, z are standard
// normal draws keyed by (seed, cell, index). The optional GPD tail replaces
// the upper part of z above `u` (in standard units) with a generalized
// Pareto excess, preserving the probability of exceeding u.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hens/store.hpp"

namespace hens::synth {

struct TailSpec {
  enum class Kind { gaussian, gpd };
  Kind kind = Kind::gaussian;
  double xi = 0.0;
  double sigma_g = 1.0;
  double u = 2.0;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  std::uint32_t n_checkpoints = 29;
  std::uint32_t members_per_checkpoint = 256;
  std::uint32_t n_lead = 1;
  std::uint32_t n_lat = 1;
  std::uint32_t n_lon = 1;
  double member_sd = 1.0;      // tau
  double checkpoint_sd = 0.0;  // sigma_b
  double base_mean = 0.0;      // m
  TailSpec tail;
  // Amplitude of a smooth large-scale pattern added to m; 0 disables it.
  double low_mode_amplitude = 0.0;
  std::string variable_name = "t2m";
  std::string init_time = "2023-06-01T00:00:00Z";

  std::uint32_t n_ensemble() const { return n_checkpoints * members_per_checkpoint; }
  store::CubeDims dims() const { return {n_ensemble(), n_lead, n_lat, n_lon}; }
  std::uint64_t n_cells() const { return std::uint64_t{n_lead} * n_lat * n_lon; }

  /// Throws UsageError unless tau > 0, sigma_b >= 0 and all counts are positive.
  void validate() const;

  /// Parses the JSON configuration. Unknown keys are rejected.
  static SynthConfig from_json(const std::string& text);
  std::string to_json() const;
};

/// Standard-normal draw pushed through the configured tail.
double shaped_noise(const TailSpec& tail, double z);

/// m_i at a cell (cell = (lead * n_lat + lat) * n_lon + lon).
double checkpoint_mean(const SynthConfig& cfg, std::uint32_t checkpoint, std::uint64_t cell);

/// Value of global member index e = checkpoint * members_per_checkpoint + j.
double member_value(const SynthConfig& cfg, std::uint64_t member, std::uint64_t cell);

store::EnsembleCube gen_random_effects_ensemble(const SynthConfig& cfg,
                                                store::AxisOrder order = store::AxisOrder::gen);

/// Same values as gen_random_effects_ensemble, streamed to disk one
/// (member, lead) field at a time. Returns the header written.
store::CubeHeader write_random_effects_ensemble(const SynthConfig& cfg,
                                                const std::filesystem::path& path);

/// One extra exchangeable draw per cell: a uniformly chosen checkpoint i*
/// and an unused member index n_ensemble + member_seed_offset.
store::CellGrid gen_exchangeable_verification(const SynthConfig& cfg,
                                              std::uint64_t member_seed_offset = 0);

/// Inverse-CDF draws from the GPD with threshold u, scale sigma_g, shape xi.
std::vector<double> gen_gpd_sample(std::size_t n, double xi, double sigma_g, double u,
                                   std::uint64_t seed);

/// GPD quantile u + (sigma_g/xi)((1-p)^-xi - 1), xi = 0 giving u - sigma_g log(1-p).
/// Takes the survival probability s = 1 - p to keep precision in the tail.
double gpd_quantile_from_survival(double s, double xi, double sigma_g, double u);

/// GPD distribution function at x.
double gpd_cdf(double x, double xi, double sigma_g, double u);

}  // namespace hens::synth
