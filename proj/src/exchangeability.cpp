#include "hens/exchangeability.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/random/gamma_distribution.hpp>

#include "hens/error.hpp"
#include "hens/numeric.hpp"
#include "hens/parallel.hpp"
#include "hens/rng.hpp"

namespace hens::exch {

VarianceComponents variance_components(std::span<const double> data, std::size_t I,
                                       std::size_t J) {
  if (I < 2 || J < 2) throw UsageError("need at least two checkpoints and two members each");
  if (data.size() != I * J)
    throw UsageError("unbalanced design: expected " + std::to_string(I * J) + " values, got " +
                     std::to_string(data.size()));
  VarianceComponents vc;
  vc.I = I;
  vc.J = J;
  std::vector<double> group_means(I), within(I);
  for (std::size_t i = 0; i < I; ++i) {
    const auto g = data.subspan(i * J, J);
    group_means[i] = mean(g);
    within[i] = variance(g) * static_cast<double>(J - 1);
  }
  vc.grand_mean = mean(group_means);
  const double dI = static_cast<double>(I), dJ = static_cast<double>(J);
  vc.msw = pairwise_sum(within) / (dI * (dJ - 1.0));
  vc.msb = dJ * variance(group_means);
  if (!(vc.msw > 0.0)) throw NumericError("within-checkpoint mean square is zero");
  vc.tau2 = vc.msw;
  vc.sigma_b2 = std::max(0.0, (vc.msb - vc.msw) / dJ);
  vc.ratio = std::sqrt(vc.sigma_b2 / vc.tau2);
  return vc;
}

Interval ratio_ci(const VarianceComponents& vc, std::size_t reps, std::uint64_t seed) {
  if (vc.I < 2 || vc.J < 2 || !(vc.tau2 > 0.0)) throw UsageError("invalid variance components");
  if (reps < 40) throw UsageError("ratio CI needs at least 40 bootstrap reps");
  const double dI = static_cast<double>(vc.I), dJ = static_cast<double>(vc.J);
  const double df_w = dI * (dJ - 1.0);
  const double df_b = dI - 1.0;
  const double lambda_hat = vc.sigma_b2 / vc.tau2;
  const double expected_msb = dJ * vc.sigma_b2 + vc.tau2;

  std::vector<double> pivot(reps);
  parallel_for(reps, [&](std::size_t r) {
    RngStream rng(seed, r);
    // chi2_k = 2 Gamma(k/2, 1)
    boost::random::gamma_distribution<double> gw(0.5 * df_w, 2.0), gb(0.5 * df_b, 2.0);
    const double msw = vc.tau2 * gw(rng) / df_w;
    const double msb = expected_msb * gb(rng) / df_b;
    pivot[r] = (msb / msw) / (1.0 + dJ * lambda_hat);
  });
  const double q_lo = percentile_nearest_rank(pivot, 0.025);
  const double q_hi = percentile_nearest_rank(pivot, 0.975);
  const double f_obs = vc.msb / vc.msw;
  auto to_ratio = [&](double q) { return std::sqrt(std::max(0.0, (f_obs / q - 1.0) / dJ)); };
  return {to_ratio(q_hi), to_ratio(q_lo)};
}

}  // namespace hens::exch
