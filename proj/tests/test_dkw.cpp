#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hens/dkw.hpp"
#include "hens/error.hpp"
#include "oracles.hpp"

using namespace hens;
using namespace hens::dkw;

TEST_CASE("tail bound") {
  const auto t = dkw_tail(100, 0.1);
  CHECK(t.raw == doctest::Approx(2 * std::exp(-2.0)).epsilon(1e-14));
  CHECK(t.raw == doctest::Approx(0.27067).epsilon(1e-5));
  CHECK(t.bound == t.raw);
  const auto loose = dkw_tail(10, 0.05);
  CHECK(loose.raw > 1.0);
  CHECK(loose.bound == 1.0);
  // doubling n squares the tail, up to the factor 2
  for (double eps : {0.02, 0.05, 0.1}) {
    const double a = dkw_tail(300, eps).raw, b = dkw_tail(600, eps).raw;
    CHECK(b == doctest::Approx(a * a / 2).epsilon(1e-12));
  }
  CHECK_THROWS_AS(dkw_tail(0, 0.1), UsageError);
  CHECK_THROWS_AS(dkw_tail(10, 0.0), UsageError);
}

TEST_CASE("expected sup error bound") {
  const auto b = expected_ecdf_error_bound(100);
  CHECK(b.asymptotic == doctest::Approx(std::sqrt(M_PI / 200)).epsilon(1e-14));
  CHECK(b.asymptotic == doctest::Approx(0.12533).epsilon(1e-4));
  CHECK(b.full == doctest::Approx(std::sqrt(M_PI / 200) * std::erf(std::sqrt(200.0)) - 2 * std::exp(-200.0)));
  const auto one = expected_ecdf_error_bound(1);
  CHECK(one.full == doctest::Approx(std::sqrt(M_PI / 2) * std::erf(std::sqrt(2.0)) - 2 * std::exp(-2.0)).epsilon(1e-14));
  CHECK(one.full < one.asymptotic);
  double prev = INFINITY;
  for (std::size_t n : {1, 2, 5, 10, 100, 7424}) {
    const auto e = expected_ecdf_error_bound(n);
    CHECK(e.full <= e.asymptotic);
    CHECK(e.full < prev);
    prev = e.full;
  }
  CHECK(expected_ecdf_error_bound(1000).full / expected_ecdf_error_bound(1000).asymptotic ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(expected_ecdf_error_bound(0), UsageError);
}

TEST_CASE("functional error bound") {
  CHECK(functional_error_bound(3.0, 50) == doctest::Approx(3 * expected_ecdf_error_bound(50).full));
  CHECK(functional_error_bound(0.0, 50) == 0.0);
  const double r = functional_error_bound(1.0, 58) / functional_error_bound(1.0, 7424);
  CHECK(r == doctest::Approx(std::sqrt(7424.0 / 58)).epsilon(1e-6));
  CHECK(r == doctest::Approx(11.31).epsilon(1e-3));
}

TEST_CASE("Monte Carlo sup deviation stays under the bound") {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u;
  for (std::size_t n : {10, 100, 1000}) {
    double total = 0;
    const int trials = 2000;
    std::vector<double> x(n);
    for (int t = 0; t < trials; ++t) {
      for (auto& v : x) v = u(gen);
      std::sort(x.begin(), x.end());
      double d = 0;
      for (std::size_t i = 0; i < n; ++i)
        d = std::max({d, (i + 1.0) / n - x[i], x[i] - double(i) / n});
      total += d;
    }
    CHECK(total / trials <= expected_ecdf_error_bound(n).full);
  }
}
