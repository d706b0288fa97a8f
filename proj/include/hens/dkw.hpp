#pragma once

// Dvoretzky-Kiefer-Wolfowitz bounds on the sup-norm error of an empirical
// CDF and the resulting 1/sqrt(n) error scale of CDF functionals.

#include <cstddef>

namespace hens::dkw {

struct TailBound {
  double raw = 0.0;    // 2 exp(-2 n eps^2)
  double bound = 0.0;  // min(1, raw)
};

/// P(sup |F_n - F| > eps) <= 2 exp(-2 n eps^2). Requires n >= 1, eps > 0.
TailBound dkw_tail(std::size_t n, double eps);

struct EcdfErrorBound {
  double full = 0.0;        // sqrt(pi/2n) erf(sqrt(2n)) - 2 exp(-2n)
  double asymptotic = 0.0;  // sqrt(pi/2n)
};

/// Upper bound on E[sup |F_n - F|] from integrating the DKW tail.
EcdfErrorBound expected_ecdf_error_bound(std::size_t n);

/// g_prime * expected_ecdf_error_bound(n).full.
double functional_error_bound(double g_prime, std::size_t n);

}  // namespace hens::dkw
