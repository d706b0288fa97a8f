#include "hens/evt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hens/error.hpp"
#include "hens/numeric.hpp"
#include "hens/parallel.hpp"
#include "hens/rng.hpp"

namespace hens::evt {
namespace {

constexpr double kXiMin = -0.9;
constexpr double kXiMax = 2.0;
// Below this |xi * a| the per-observation terms switch to their Taylor series.
constexpr double kSeriesCut = 1e-2;

// Sums of the log-likelihood and its first two derivatives in (s, xi),
// s = log sigma.
struct Derivs {
  double ll = 0.0;
  double gs = 0.0, gx = 0.0;
  double hss = 0.0, hsx = 0.0, hxx = 0.0;
  bool feasible = true;
};

Derivs derivs(std::span<const double> y, double s, double xi, bool want_hessian) {
  Derivs d;
  const double sigma = std::exp(s);
  for (double yi : y) {
    const double a = yi / sigma;
    const double t = xi * a;
    const double z = 1.0 + t;
    if (!(z > 0.0)) {
      d.feasible = false;
      return d;
    }
    const double lz = std::log1p(t);
    const bool series = std::abs(t) < kSeriesCut;
    const double a2 = a * a, a3 = a2 * a, a4 = a3 * a, a5 = a4 * a;
    // log(1 + xi a) / xi
    const double lz_over_xi =
        series ? a - xi * a2 / 2 + xi * xi * a3 / 3 - xi * xi * xi * a4 / 4 +
                     xi * xi * xi * xi * a5 / 5
               : lz / xi;
    d.ll += -s - lz - lz_over_xi;
    d.gs += (a - 1.0) / z;
    if (series) {
      const double a6 = a5 * a;
      d.gx += a2 / 2 - a + xi * (a2 - 2 * a3 / 3) + xi * xi * (3 * a4 / 4 - a3) +
              xi * xi * xi * (a4 - 4 * a5 / 5) + xi * xi * xi * xi * (5 * a6 / 6 - a5);
    } else {
      d.gx += (-a * xi * (xi + 1.0) + z * lz) / (xi * xi * z);
    }
    if (!want_hessian) continue;
    d.hss += -a * (1.0 + xi) / (z * z);
    d.hsx += a * (1.0 - a) / (z * z);
    if (series) {
      const double a6 = a5 * a, a7 = a6 * a;
      d.hxx += a2 - 2 * a3 / 3 + xi * (3 * a4 / 2 - 2 * a3) + xi * xi * (3 * a4 - 12 * a5 / 5) +
               xi * xi * xi * (10 * a6 / 3 - 4 * a5) + xi * xi * xi * xi * (5 * a6 - 30 * a7 / 7);
    } else {
      d.hxx += (a2 * xi * xi * (xi + 1.0) + 2.0 * a * xi * z - 2.0 * z * z * lz) /
               (xi * xi * xi * z * z);
    }
  }
  return d;
}

double log_lik(std::span<const double> y, double s, double xi) {
  const auto d = derivs(y, s, xi, false);
  return d.feasible ? d.ll : -std::numeric_limits<double>::infinity();
}

struct Optimum {
  double s = 0.0;
  double xi = 0.0;
  double ll = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

// Damped Newton ascent with a Levenberg shift when the Hessian is not
// negative definite, and backtracking that keeps xi inside its bounds and
// every excess inside the support.
Optimum newton(std::span<const double> y, double s, double xi) {
  Optimum best;
  double ll = log_lik(y, s, xi);
  if (!std::isfinite(ll)) return best;
  const double scale = static_cast<double>(y.size());
  for (int it = 1; it <= 200; ++it) {
    const auto d = derivs(y, s, xi, true);
    const double gnorm = std::max(std::abs(d.gs), std::abs(d.gx)) / scale;
    if (gnorm < 1e-10) {
      return {s, xi, ll, it, true};
    }
    // Solve (-H + lambda I) step = g.
    double lambda = 0.0;
    double ds = 0.0, dx = 0.0;
    bool improved = false;
    for (int attempt = 0; attempt < 60 && !improved; ++attempt) {
      const double a = -d.hss + lambda, b = -d.hsx, c = -d.hxx + lambda;
      const double det = a * c - b * b;
      if (a > 0.0 && det > 0.0) {
        ds = (c * d.gs - b * d.gx) / det;
        dx = (a * d.gx - b * d.gs) / det;
        double step = 1.0;
        for (int half = 0; half < 40; ++half, step *= 0.5) {
          const double ns = s + step * ds;
          const double nx = xi + step * dx;
          if (nx <= kXiMin || nx >= kXiMax) continue;
          const double nll = log_lik(y, ns, nx);
          if (nll >= ll) {
            const double change = std::max(std::abs(ns - s), std::abs(nx - xi));
            s = ns;
            xi = nx;
            const double gain = nll - ll;
            ll = nll;
            improved = true;
            if (change < 1e-13 || gain <= 1e-15 * std::abs(ll)) {
              const auto chk = derivs(y, s, xi, false);
              if (std::max(std::abs(chk.gs), std::abs(chk.gx)) / scale < 1e-6)
                return {s, xi, ll, it, true};
            }
            break;
          }
        }
      }
      lambda = lambda == 0.0 ? 1e-6 * (std::abs(d.hss) + std::abs(d.hxx) + 1.0) : lambda * 10.0;
    }
    if (!improved) {
      // No ascent direction left; accept if the gradient is small or xi is pinned.
      const bool pinned = xi - kXiMin < 1e-6 || kXiMax - xi < 1e-6;
      return {s, xi, ll, it, gnorm < 1e-6 || pinned};
    }
  }
  return {s, xi, ll, 200, false};
}

}  // namespace

double gpd_log_likelihood(std::span<const double> excesses, double sigma, double xi) {
  if (!(sigma > 0.0)) throw UsageError("GPD scale must be positive");
  return log_lik(excesses, std::log(sigma), xi);
}

GpdFit gpd_fit(std::span<const double> sample, double u) {
  std::vector<double> y;
  for (double x : sample)
    if (x > u) y.push_back(x - u);
  if (y.size() < kMinExceedances)
    throw DataError("insufficient exceedances above threshold: " + std::to_string(y.size()) +
                    " (need " + std::to_string(kMinExceedances) + ")");

  const double m = mean(y);
  const double v = variance(y);
  const double ymax = *std::max_element(y.begin(), y.end());

  std::vector<std::pair<double, double>> starts;
  if (v > 0.0) {
    const double r = m * m / v;
    double xi0 = std::clamp(0.5 * (1.0 - r), kXiMin + 0.05, kXiMax - 0.05);
    double sigma0 = 0.5 * m * (r + 1.0);
    if (1.0 + xi0 * ymax / sigma0 <= 0.0) sigma0 = -xi0 * ymax * 1.1;
    starts.emplace_back(std::log(sigma0), xi0);
  }
  starts.emplace_back(std::log(m), 0.0);

  Optimum best;
  for (const auto& [s0, x0] : starts) {
    const auto o = newton(y, s0, x0);
    if (o.converged && o.ll > best.ll) best = o;
    else if (!best.converged && o.ll > best.ll) best = o;
  }
  if (!best.converged || !std::isfinite(best.ll))
    throw NumericError("GPD likelihood maximization did not converge");

  GpdFit fit;
  fit.u = u;
  fit.sigma = std::exp(best.s);
  fit.xi = best.xi;
  fit.n_exceed = y.size();
  fit.n_total = sample.size();
  fit.theta = static_cast<double>(y.size()) / static_cast<double>(sample.size());
  fit.log_likelihood = best.ll;
  fit.iterations = best.iterations;
  fit.converged = true;
  fit.at_shape_bound = fit.xi - kXiMin < 1e-6 || kXiMax - fit.xi < 1e-6;

  // Observed information in (s, xi), inverted, then mapped to (sigma, xi).
  const auto d = derivs(y, best.s, best.xi, true);
  const double a = -d.hss, b = -d.hsx, c = -d.hxx;
  const double det = a * c - b * b;
  if (!(a > 0.0 && det > 0.0))
    throw NumericError("GPD observed information is not positive definite");
  const double v_ss = c / det, v_sx = -b / det, v_xx = a / det;
  fit.cov = {fit.sigma * fit.sigma * v_ss, fit.sigma * v_sx, 0.0,
             fit.sigma * v_sx, v_xx, 0.0,
             0.0, 0.0, fit.theta * (1.0 - fit.theta) / static_cast<double>(fit.n_total)};
  return fit;
}

namespace {

double tail_log_ratio(const GpdFit& fit, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("percentile level must lie in (0, 1)");
  if (!(fit.sigma > 0.0) || !(fit.theta > 0.0 && fit.theta <= 1.0))
    throw UsageError("invalid GPD parameters");
  return std::log(fit.theta / (1.0 - alpha));
}

}  // namespace

double gpd_percentile(const GpdFit& fit, double alpha) {
  const double L = tail_log_ratio(fit, alpha);
  if (std::abs(fit.xi) < 1e-6) return fit.u + fit.sigma * L;
  return fit.u + fit.sigma / fit.xi * std::expm1(fit.xi * L);
}

bool in_modelled_tail(const GpdFit& fit, double alpha) { return 1.0 - alpha < fit.theta; }

std::array<double, 3> gpd_percentile_gradient(const GpdFit& fit, double alpha) {
  const double L = tail_log_ratio(fit, alpha);
  const double xi = fit.xi;
  const double sigma = fit.sigma;
  const double d_theta = sigma * std::pow(1.0 - alpha, -xi) * std::pow(fit.theta, xi - 1.0);
  if (std::abs(xi) < 1e-6) {
    const double L2 = L * L;
    return {L + xi * L2 / 2 + xi * xi * L2 * L / 6,
            sigma * (L2 / 2 + xi * L2 * L / 3 + xi * xi * L2 * L2 / 8), d_theta};
  }
  const double bracket = std::expm1(xi * L);
  const double power = std::exp(xi * L);
  return {bracket / xi, -sigma * bracket / (xi * xi) + sigma * power * L / xi, d_theta};
}

double gpd_percentile_se(const GpdFit& fit, double alpha) {
  const auto g = gpd_percentile_gradient(fit, alpha);
  double q = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) q += g[i] * fit.cov[3 * i + j] * g[j];
  if (!std::isfinite(q)) throw NumericError("non-finite delta-method variance");
  return std::sqrt(std::max(0.0, q));
}

double ThresholdRule::choose(std::span<const double> sample) const {
  if (sample.size() <= min_exceedances)
    throw DataError("sample of " + std::to_string(sample.size()) + " values cannot have " +
                    std::to_string(min_exceedances) + " exceedances");
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  double u = sorted[nearest_rank(n, quantile) - 1];
  auto above = [&](double t) {
    return static_cast<std::size_t>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), t));
  };
  if (above(u) >= min_exceedances) return u;
  // Largest order statistic with enough values strictly above it.
  std::size_t k = n - min_exceedances - 1;
  while (true) {
    u = sorted[k];
    if (above(u) >= min_exceedances) return u;
    if (k == 0) break;
    --k;
  }
  throw DataError("too many ties to find a threshold with enough exceedances");
}

StatEstimate evt_percentile_mc(std::span<const double> pool, std::size_t n, double alpha,
                               std::size_t reps, std::uint64_t seed, const ThresholdRule& u_rule) {
  if (pool.empty() || n == 0 || reps == 0) throw UsageError("pool, n and reps must be nonempty");
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("percentile level must lie in (0, 1)");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> est(reps, nan), se(reps, nan);
  parallel_for(reps, [&](std::size_t r) {
    RngStream rng(seed, r);
    std::vector<double> draw(n);
    for (auto& x : draw) x = pool[rng.below(pool.size())];
    try {
      const auto fit = gpd_fit(draw, u_rule.choose(draw));
      const double x = gpd_percentile(fit, alpha);
      const double s = gpd_percentile_se(fit, alpha);
      if (std::isfinite(x) && std::isfinite(s)) {
        est[r] = x;
        se[r] = s;
      }
    } catch (const DataError&) {
    } catch (const NumericError&) {
    }
  });
  std::vector<double> ok_est, ok_se;
  for (std::size_t r = 0; r < reps; ++r) {
    if (std::isnan(est[r])) continue;
    ok_est.push_back(est[r]);
    ok_se.push_back(se[r]);
  }
  StatEstimate out;
  out.statistic = "evt";
  out.n = n;
  out.failed_reps = reps - ok_est.size();
  if (ok_est.empty()) throw NumericError("no resample produced a GPD fit");
  out.value = mean(ok_est);
  out.mc_uncertainty = population_stddev(ok_est);
  out.analytic_uncertainty = mean(ok_se);
  return out;
}

}  // namespace hens::evt
