#pragma once

// One-way random-effects model X_ij = m_i + tau * e_ij, m_i ~ N(m, sigma_b^2),
// for I checkpoints with J members each. R = sigma_b / tau is the
// exchangeability ratio; R < 1 means members are interchangeable across
// checkpoints.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>

namespace hens::exch {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct VarianceComponents {
  std::size_t I = 0;
  std::size_t J = 0;
  double grand_mean = 0.0;
  double msw = 0.0;  // within-checkpoint mean square, I(J-1) dof
  double msb = 0.0;  // between-checkpoint mean square, I-1 dof
  double tau2 = 0.0;
  double sigma_b2 = 0.0;  // floored at zero
  double ratio = 0.0;
  std::optional<Interval> ci95;

  bool exchangeable() const { return ratio < 1.0; }
};

/// ANOVA moment estimators from data[i * J + j]. Requires I, J >= 2 and
/// data.size() == I * J.
VarianceComponents variance_components(std::span<const double> data, std::size_t I,
                                       std::size_t J);

/// 95% interval on R by parametric bootstrap from the fitted model. Each
/// simulated dataset is summarized by its mean squares, drawn from their
/// scaled chi-square distributions, and the pivot
/// (MSB* / MSW*) / (1 + J sigma_b^2 / tau^2) is inverted at its 2.5 and 97.5
/// percentiles. Rep r uses RngStream(seed, r).
Interval ratio_ci(const VarianceComponents& vc, std::size_t reps = 2000, std::uint64_t seed = 0);

}  // namespace hens::exch
