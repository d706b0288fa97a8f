#pragma once

#include <cstddef>
#include <optional>
#include <string>

namespace hens {

/// A Monte Carlo estimate of an ensemble statistic at sample size n.
struct StatEstimate {
  std::string statistic;
  std::size_t n = 0;
  double value = 0.0;
  double mc_uncertainty = 0.0;
  std::optional<double> analytic_uncertainty;
  bool normalized = false;
  // Reps that produced no value (failed fits); zero for plain statistics.
  std::size_t failed_reps = 0;
};

}  // namespace hens
