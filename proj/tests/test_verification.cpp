#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hens/error.hpp"
#include "hens/verification.hpp"
#include "oracles.hpp"

using namespace hens;
using namespace hens::verify;

namespace {

store::EnsembleField normal_field(std::uint32_t m, std::uint32_t n_lat, std::uint32_t n_lon,
                                  std::uint64_t seed) {
  store::EnsembleField f{m, n_lat, n_lon, {}};
  const auto z = oracle::normals(std::size_t(m) * n_lat * n_lon, seed);
  f.values.assign(z.begin(), z.end());
  return f;
}

}  // namespace

TEST_CASE("Z-scores and member counts") {
  ClimatologyTable clim(1, 2, "1990-2019");
  clim.set(7, 12, 1, 280.0, 4.0);
  CHECK(zscore(288.0, clim, 1, 7, 12) == 2.0);
  CHECK(zscore(280.0, clim, 1, 7, 12) == 0.0);
  CHECK(clim.has(1, 7, 12));
  CHECK_FALSE(clim.has(0, 7, 12));
  CHECK_THROWS_AS(clim.lookup(0, 7, 12), DataError);
  CHECK_THROWS_AS(clim.set(13, 0, 0, 1, 1), UsageError);
  CHECK_THROWS_AS(clim.set(1, 0, 0, 1, 0), UsageError);
  const ClimatologyTable::Entry e{10.0, 2.0};
  // shift and scale of both sides leaves Z unchanged
  CHECK(zscore(3 * 13.0 + 1, ClimatologyTable::Entry{3 * 10.0 + 1, 3 * 2.0}) == doctest::Approx(zscore(13.0, e)));
  const std::vector<double> ens = {9, 11, 13, 14, 15};
  CHECK(members_at_least_as_extreme(ens, 1.5, e) == 3);
  CHECK(members_at_least_as_extreme(ens, 3.0, e) == 0);
  CHECK(members_at_least_as_extreme(ens, -1.0, e) == 5);
}

TEST_CASE("climatology round trip") {
  oracle::TempDir dir;
  ClimatologyTable clim(2, 3, "1991-2020");
  const std::vector<double> m = {1, 2, 3, 4, 5, 6}, s = {1, 1, 2, 2, 3, 3};
  clim.set_slot(1, 0, m, s);
  clim.set(12, 23, 5, -2.5, 0.5);
  clim.write(dir / "c.hens");
  const auto back = ClimatologyTable::read(dir / "c.hens");
  CHECK(back.period() == "1991-2020");
  CHECK(back.lookup(4, 1, 0).mean == 5);
  CHECK(back.lookup(4, 1, 0).sd == 3);
  CHECK(back.lookup(5, 12, 23).mean == -2.5);
  CHECK_FALSE(back.has(5, 12, 22));
}

TEST_CASE("best member RMSE") {
  auto f = normal_field(20, 9, 10, 4);
  std::vector<double> verif(f.n_cells()), z(f.n_cells());
  for (std::size_t c = 0; c < f.n_cells(); ++c) {
    verif[c] = 0.3f;
    z[c] = (c % 3 == 0) ? 0.1 : 1.1;  // bins 0 and 1 only
  }
  const std::vector<std::size_t> sizes = {1, 2, 5, 10, 20};
  const auto r = best_member_rmse(f, verif, z, sizes, 30, 8);
  REQUIRE(r.curves.size() == 2);
  CHECK(r.skipped_bins == std::vector<double>{2, 3, 4});
  for (const auto& c : r.curves) {
    CHECK(c.n_cells == (c.center == 0 ? 30u : 60u));
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      CHECK(c.lo[k] <= c.mean[k] * (1 + 1e-12));
      CHECK(c.mean[k] <= c.hi[k] * (1 + 1e-12));
      if (k) CHECK(c.mean[k] <= c.mean[k - 1]);  // nested samples never get worse
    }
    // all members: no sampling variability
    CHECK(c.lo.back() == c.hi.back());
  }
  // a member equal to the verification drives the full-ensemble curve to 0
  for (std::size_t c = 0; c < f.n_cells(); ++c) f.values[c * 20 + 7] = 0.3f;
  const auto exact = best_member_rmse(f, verif, z, sizes, 10, 8);
  for (const auto& c : exact.curves) CHECK(c.mean.back() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(best_member_rmse(f, verif, z, std::vector<std::size_t>{21}, 10, 8), UsageError);
}

TEST_CASE("extreme-event CI width") {
  std::vector<double> ens(58, 0.0);
  for (int i = 0; i < 10; ++i) ens[i] = 1.0;
  const auto ci = extreme_ci_width(ens, 0.5, 2000, 1);
  CHECK(ci.probability == doctest::Approx(10.0 / 58));
  CHECK(ci.lo >= 4.0 / 58);
  CHECK(ci.lo <= 6.0 / 58);
  CHECK(ci.hi >= 15.0 / 58);
  CHECK(ci.hi <= 17.0 / 58);
  const auto all = extreme_ci_width(std::vector<double>(30, 2.0), 1.0, 200, 2);
  CHECK(all.probability == 1.0);
  CHECK(all.width() == 0.0);
  CHECK(extreme_ci_width(ens, 0.5, 2000, 1).lo == ci.lo);
}

TEST_CASE("outlier statistic") {
  const auto f = normal_field(99, 41, 50, 3);
  std::vector<double> median(f.n_cells());
  for (std::size_t c = 0; c < f.n_cells(); ++c) {
    std::vector<double> x(f.cell(c).begin(), f.cell(c).end());
    std::nth_element(x.begin(), x.begin() + 49, x.end());
    median[c] = x[49];
  }
  const std::vector<std::size_t> full = {99};
  CHECK(outlier_statistic(f, median, full, 3, 1, OutlierMode::classic)[0] == 0.0);
  CHECK(outlier_statistic(f, median, full, 200, 1, OutlierMode::bootstrap95)[0] == 0.0);
  // exchangeable verification: outside the range of n members with probability 2/(n+1)
  const auto v = oracle::normals(f.n_cells(), 99);
  const std::vector<std::size_t> sizes = {9, 49};
  const auto o = outlier_statistic(f, v, sizes, 20, 5, OutlierMode::classic);
  CHECK(o[0] == doctest::Approx(0.2).epsilon(0.15));
  CHECK(o[1] == doctest::Approx(0.04).epsilon(0.3));
  CHECK(outlier_statistic(f, v, sizes, 20, 5, OutlierMode::classic) == o);
  CHECK_THROWS_AS(outlier_statistic(f, v, std::vector<std::size_t>{100}, 5, 1, OutlierMode::classic), UsageError);
}

TEST_CASE("bust confusion matrix") {
  const auto a = normal_field(10, 11, 10, 1);
  auto b = a;
  std::vector<double> v(a.n_cells()), z(a.n_cells());
  std::mt19937_64 gen(3);
  std::normal_distribution<double> d(0, 1.5);
  for (std::size_t c = 0; c < v.size(); ++c) {
    v[c] = d(gen);
    z[c] = v[c];
  }
  const auto same = bust_confusion(a, v, z, b, v, z);
  CHECK(same.a_bust_only == 0.0);
  CHECK(same.b_bust_only == 0.0);
  CHECK(same.both_bust > 0.0);
  CHECK(same.both_capture + same.both_bust == doctest::Approx(1.0));
  // widening B on the warm side can only remove busts
  for (auto& x : b.values) x *= 3.0f;
  const auto wide = bust_confusion(a, v, z, b, v, z);
  CHECK(wide.b_bust_only == 0.0);
  CHECK(wide.a_bust_only > 0.0);
  CHECK(wide.both_capture + wide.a_bust_only + wide.b_bust_only + wide.both_bust == doctest::Approx(1.0));
  // cold-side exceedances are never busts
  std::vector<double> neg(v.size(), -1.0);
  std::vector<double> big(v.size(), 1e6);
  CHECK(bust_confusion(a, big, neg, b, big, neg).both_bust == 0.0);
}

TEST_CASE("spread and error") {
  // calibrated: verification is one more draw from the same distribution
  const auto f = normal_field(10, 41, 60, 12);
  const auto v = oracle::normals(f.n_cells(), 13);
  const auto r = spread_error(f, v);
  CHECK(r.ratio == doctest::Approx(1.0).epsilon(0.05));
  CHECK(spread_error(f, v, false).ratio == doctest::Approx(r.ratio / std::sqrt(1.1)));
  store::EnsembleField flat{4, 3, 1, std::vector<float>(12, 2.0f)};
  const std::vector<double> off = {3, 3, 3};
  CHECK(spread_error(flat, off).ratio == 0.0);
  const auto inf = spread_error(flat, std::vector<double>{2, 2, 2});
  CHECK(inf.ratio_infinite);
  CHECK(std::isinf(inf.ratio));
}
