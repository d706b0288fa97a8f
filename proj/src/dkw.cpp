#include "hens/dkw.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hens/error.hpp"

namespace hens::dkw {

TailBound dkw_tail(std::size_t n, double eps) {
  if (n == 0) throw UsageError("n must be at least 1");
  if (!(eps > 0.0)) throw UsageError("epsilon must be positive");
  TailBound t;
  t.raw = 2.0 * std::exp(-2.0 * static_cast<double>(n) * eps * eps);
  t.bound = std::min(1.0, t.raw);
  return t;
}

EcdfErrorBound expected_ecdf_error_bound(std::size_t n) {
  if (n == 0) throw UsageError("n must be at least 1");
  const double nn = static_cast<double>(n);
  EcdfErrorBound b;
  b.asymptotic = std::sqrt(std::numbers::pi / (2.0 * nn));
  b.full = b.asymptotic * std::erf(std::sqrt(2.0 * nn)) - 2.0 * std::exp(-2.0 * nn);
  return b;
}

double functional_error_bound(double g_prime, std::size_t n) {
  if (!std::isfinite(g_prime)) throw UsageError("sensitivity must be finite");
  return g_prime * expected_ecdf_error_bound(n).full;
}

}  // namespace hens::dkw
