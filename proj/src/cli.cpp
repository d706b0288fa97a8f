#include "hens/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hens/dkw.hpp"
#include "hens/error.hpp"
#include "hens/evt.hpp"
#include "hens/exchangeability.hpp"
#include "hens/gain.hpp"
#include "hens/manifest.hpp"
#include "hens/numeric.hpp"
#include "hens/parallel.hpp"
#include "hens/sample_stats.hpp"
#include "hens/scoring.hpp"
#include "hens/store.hpp"
#include "hens/synth.hpp"
#include "hens/verification.hpp"

namespace hens::cli {
namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Everything one invocation records in its manifest.
struct Run {
  std::vector<std::string> argv;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
  std::optional<std::uint64_t> seed;
  std::string config_text;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;

  void input(const fs::path& p) { inputs.push_back(p); }
};

// CSV written to a file (recorded as an output) or to stdout.
class Csv {
 public:
  Csv(Run& run, const std::string& path) : run_(run), path_(path) {}
  ~Csv() = default;

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) buf_ << ',';
      buf_ << cells[i];
    }
    buf_ << '\n';
  }

  void finish() {
    if (path_.empty()) {
      *run_.out << buf_.str();
      return;
    }
    std::ofstream f(path_, std::ios::binary | std::ios::trunc);
    f << buf_.str();
    if (!f) throw DataError("cannot write '" + path_ + "'");
    run_.outputs.emplace_back(path_);
  }

 private:
  Run& run_;
  std::string path_;
  std::ostringstream buf_;
};

store::CellGrid load_grid(Run& run, const std::string& path) {
  run.input(path);
  const auto cube = store::read_cube(path);
  const auto& d = cube.header.dims;
  if (d.n_ensemble != 1) throw DataError("'" + path + "' must hold a single-member grid");
  store::CellGrid g{d.n_lead, d.n_lat, d.n_lon, std::vector<double>(d.cell_count())};
  for (std::uint32_t l = 0; l < d.n_lead; ++l)
    for (std::uint32_t la = 0; la < d.n_lat; ++la)
      for (std::uint32_t lo = 0; lo < d.n_lon; ++lo)
        g.values[(std::size_t{l} * d.n_lat + la) * d.n_lon + lo] = cube.at(0, l, la, lo);
  return g;
}

std::vector<double> grid_lead(const store::CellGrid& g, std::uint32_t lead) {
  if (lead >= g.n_lead) throw UsageError("lead index out of range for verification grid");
  const std::size_t plane = std::size_t{g.n_lat} * g.n_lon;
  return {g.values.begin() + static_cast<std::ptrdiff_t>(lead * plane),
          g.values.begin() + static_cast<std::ptrdiff_t>((lead + 1) * plane)};
}

void check_same_grid(const store::EnsembleField& f, const store::CellGrid& g) {
  if (f.n_lat != g.n_lat || f.n_lon != g.n_lon)
    throw DataError("verification grid does not match the ensemble grid");
}

// Valid (month, hour) of a lead: init time plus lead * step hours.
std::pair<int, int> valid_month_hour(const std::string& init_time, std::uint32_t lead,
                                     double step_hours) {
  int y = 0, mo = 0, d = 0, h = 0;
  if (std::sscanf(init_time.c_str(), "%d-%d-%dT%d", &y, &mo, &d, &h) != 4)
    throw DataError("cannot parse init time '" + init_time + "' (want YYYY-MM-DDTHH...)");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw DataError("invalid init date '" + init_time + "'");
  const auto minutes_ahead = static_cast<long long>(std::llround(lead * step_hours * 60.0));
  const auto t = sys_days{ymd} + hours{h} + minutes{minutes_ahead};
  const auto day_start = floor<days>(t);
  const year_month_day vd{day_start};
  const auto hour = duration_cast<hours>(t - day_start).count();
  return {static_cast<int>(static_cast<unsigned>(vd.month())), static_cast<int>(hour)};
}

std::vector<double> zscores_for(const verify::ClimatologyTable& clim, std::span<const double> v,
                                int month, int hour) {
  std::vector<double> z(v.size());
  for (std::size_t c = 0; c < v.size(); ++c) z[c] = verify::zscore(v[c], clim, c, month, hour);
  return z;
}

void check_clim_grid(const verify::ClimatologyTable& clim, std::uint32_t n_lat, std::uint32_t n_lon) {
  if (clim.n_lat() != n_lat || clim.n_lon() != n_lon)
    throw DataError("climatology grid does not match the ensemble grid");
}

// Pool of values for the resampling commands: one cell's members, or the
// per-member spatial mean.
struct PoolSpec {
  std::uint32_t lead = 0;
  std::uint32_t lat = 0;
  std::uint32_t lon = 0;
  bool series = false;
  std::string mask;
};

std::vector<float> load_mask(Run& run, const std::string& path) {
  if (path.empty()) return {};
  run.input(path);
  const auto cube = store::read_cube(path);
  const auto& d = cube.header.dims;
  if (d.n_ensemble != 1 || d.n_lead != 1) throw DataError("mask must be a single 2-D field");
  return cube.values;
}

std::vector<double> load_pool(Run& run, const std::string& path, const PoolSpec& spec) {
  run.input(path);
  const store::CubeReader reader(path);
  if (spec.series) {
    const auto mask = load_mask(run, spec.mask);
    return gain::spatial_mean_series(reader, spec.lead, mask);
  }
  const auto& d = reader.dims();
  if (spec.lat >= d.n_lat || spec.lon >= d.n_lon) throw UsageError("cell index out of range");
  const auto field = store::load_lead(reader, spec.lead);
  const auto cell = field.cell(std::size_t{spec.lat} * d.n_lon + spec.lon);
  return {cell.begin(), cell.end()};
}

void add_pool_options(CLI::App* app, PoolSpec& spec) {
  app->add_option("--lead", spec.lead, "Lead index");
  app->add_option("--lat", spec.lat, "Latitude index of the pooled cell");
  app->add_option("--lon", spec.lon, "Longitude index of the pooled cell");
  app->add_flag("--series", spec.series, "Pool the latitude-weighted spatial mean of each member");
  app->add_option("--mask", spec.mask, "Single-field cube; nonzero cells enter the spatial mean");
}

// ---------------------------------------------------------------------------

struct Handlers {
  std::vector<std::pair<CLI::App*, std::function<void(Run&)>>> list;
  void add(CLI::App* app, std::function<void(Run&)> fn) { list.emplace_back(app, std::move(fn)); }
};

void register_synth(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("synth", "Generate a seeded random-effects ensemble cube");
  struct Opts {
    std::string config, out, verification;
    std::uint64_t offset = 0;
    std::optional<std::uint64_t> seed;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--config", o->config, "JSON configuration")->required();
  sub->add_option("--out", o->out, "Output cube (generation order)")->required();
  sub->add_option("--verification", o->verification, "Also write an exchangeable verification grid");
  sub->add_option("--verification-offset", o->offset, "Member index offset of the verification draw");
  sub->add_option("--seed", o->seed, "Override the configured seed");
  h.add(sub, [o](Run& run) {
    run.input(o->config);
    run.config_text = read_text(o->config);
    auto cfg = synth::SynthConfig::from_json(run.config_text);
    if (o->seed) cfg.seed = *o->seed;
    run.seed = cfg.seed;
    synth::write_random_effects_ensemble(cfg, o->out);
    run.outputs.emplace_back(o->out);
    if (!o->verification.empty()) {
      const auto grid = synth::gen_exchangeable_verification(cfg, o->offset);
      auto cube = store::EnsembleCube::zeros({1, cfg.n_lead, cfg.n_lat, cfg.n_lon},
                                             store::AxisOrder::gen, cfg.variable_name, cfg.init_time);
      for (std::size_t i = 0; i < grid.values.size(); ++i)
        cube.values[i] = static_cast<float>(grid.values[i]);
      store::write_cube(cube, o->verification);
      run.outputs.emplace_back(o->verification);
    }
  });
}

void register_transpose(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("transpose", "Stream a cube into the other axis order");
  struct Opts {
    std::string in, out;
    double mem_mb = 256;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--in", o->in)->required();
  sub->add_option("--out", o->out)->required();
  sub->add_option("--mem-mb", o->mem_mb, "Working memory budget in MiB")->check(CLI::PositiveNumber);
  h.add(sub, [o](Run& run) {
    run.input(o->in);
    const auto budget = static_cast<std::uint64_t>(o->mem_mb * 1024.0 * 1024.0);
    store::transpose(o->in, o->out, budget);
    run.outputs.emplace_back(o->out);
  });
}

void register_reduce(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("reduce", "Reduce an analysis-order cube over the ensemble axis");
  struct Opts {
    std::string stat = "mean", in, out, nan = "strict";
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--stat", o->stat, "mean|min|max|std|p:<alpha>|count:<t>|boot:<seed>");
  sub->add_option("--in", o->in)->required();
  sub->add_option("--out", o->out, "CSV output (stdout if omitted)");
  sub->add_option("--nan", o->nan, "strict|propagate")->check(CLI::IsMember({"strict", "propagate"}));
  h.add(sub, [o](Run& run) {
    const auto kind = store::ReductionKind::parse(o->stat);
    if (kind.op == store::ReductionKind::Op::bootstrap_member) run.seed = kind.seed;
    run.input(o->in);
    const auto grid = store::reduce_ensemble(
        fs::path(o->in), kind, o->nan == "strict" ? store::NanPolicy::strict : store::NanPolicy::propagate);
    Csv csv(run, o->out);
    csv.row({"lead", "lat", "lon", kind.name()});
    for (std::uint32_t l = 0; l < grid.n_lead; ++l)
      for (std::uint32_t la = 0; la < grid.n_lat; ++la)
        for (std::uint32_t lo = 0; lo < grid.n_lon; ++lo)
          csv.row({std::to_string(l), std::to_string(la), std::to_string(lo), num(grid.at(l, la, lo))});
    csv.finish();
  });
}

void register_gain(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("gain", "Information gain: theory, Monte Carlo, or per-cell map");
  struct Opts {
    std::string mode = "theory", in, out;
    std::vector<std::size_t> n;
    std::size_t reps = 2000;
    std::uint64_t seed = 0;
    bool with_replacement = false;
    PoolSpec pool;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--mode", o->mode)->check(CLI::IsMember({"theory", "empirical", "map"}));
  sub->add_option("--n", o->n, "Ensemble sizes")->delimiter(',');
  sub->add_option("--reps", o->reps)->check(CLI::PositiveNumber);
  sub->add_option("--seed", o->seed);
  sub->add_option("--in", o->in, "Input cube (empirical, map)");
  sub->add_option("--out", o->out, "CSV output (stdout if omitted)");
  sub->add_flag("--with-replacement", o->with_replacement, "Resample with replacement");
  add_pool_options(sub, o->pool);
  h.add(sub, [o](Run& run) {
    Csv csv(run, o->out);
    if (o->mode == "theory") {
      if (o->n.empty()) throw UsageError("--n is required");
      csv.row({"n", "gain", "uncertainty"});
      for (auto n : o->n) csv.row({std::to_string(n), num(gain::gaussian_expected_gain(n)), "0"});
    } else if (o->mode == "empirical") {
      if (o->in.empty() || o->n.empty()) throw UsageError("--in and --n are required");
      run.seed = o->seed;
      const auto pool = load_pool(run, o->in, o->pool);
      csv.row({"n", "gain", "uncertainty"});
      for (auto n : o->n) {
        const auto e = gain::expected_gain_mc(
            pool, n, o->reps, o->seed,
            o->with_replacement ? gain::Sampling::with_replacement : gain::Sampling::without_replacement);
        csv.row({std::to_string(n), num(e.value), num(e.mc_uncertainty)});
      }
    } else {
      if (o->in.empty()) throw UsageError("--in is required");
      run.input(o->in);
      const auto map = gain::gain_map(store::CubeReader(o->in));
      csv.row({"lead", "lat", "lon", "gain"});
      const auto& g = map.gain;
      for (std::uint32_t l = 0; l < g.n_lead; ++l)
        for (std::uint32_t la = 0; la < g.n_lat; ++la)
          for (std::uint32_t lo = 0; lo < g.n_lon; ++lo)
            csv.row({std::to_string(l), std::to_string(la), std::to_string(lo), num(g.at(l, la, lo))});
      if (map.zero_variance_cells > 0)
        *run.err << "zero-variance cells: " << map.zero_variance_cells << "\n";
    }
    csv.finish();
  });
}

void register_stats(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("stats", "Bootstrap uncertainty of an ensemble statistic vs size");
  struct Opts {
    std::string stat = "mean", out, rule = "linear";
    std::vector<std::string> in;
    std::vector<std::size_t> sizes;
    std::size_t reps = 2000;
    std::uint64_t seed = 0;
    bool normalize = false;
    PoolSpec pool;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--stat", o->stat, "mean|std|p:<alpha>");
  sub->add_option("--in", o->in, "Input cubes, one per initialization date")->required();
  sub->add_option("--sizes", o->sizes)->delimiter(',')->required();
  sub->add_option("--reps", o->reps)->check(CLI::PositiveNumber);
  sub->add_option("--seed", o->seed);
  sub->add_option("--rule", o->rule, "Percentile rule")->check(CLI::IsMember({"linear", "nearest"}));
  sub->add_flag("--normalize", o->normalize, "Express results in full-ensemble analytic units");
  sub->add_option("--out", o->out, "CSV output (stdout if omitted)");
  add_pool_options(sub, o->pool);
  h.add(sub, [o](Run& run) {
    run.seed = o->seed;
    const auto stat = stats::Statistic::parse(o->stat);
    const auto rule = o->rule == "linear" ? PercentileRule::linear : PercentileRule::nearest_rank;
    const bool pct = stat.kind == stats::Statistic::Kind::percentile;
    Csv csv(run, o->out);
    std::vector<stats::DateEstimates> dates;
    std::vector<std::vector<double>> exact;  // per date, per size (percentiles)
    for (std::size_t d = 0; d < o->in.size(); ++d) {
      auto pool = load_pool(run, o->in[d], o->pool);
      const stats::Gaussian fit{mean(pool), stddev(pool)};
      stats::DateEstimates de;
      de.full_analytic = stats::analytic_uncertainty(stat, pool.size(), fit);
      std::vector<double> ex;
      for (auto n : o->sizes) {
        de.by_size.push_back(stats::bootstrap_statistic(pool, stat, n, o->reps, o->seed + d, rule));
        if (pct) {
          try {
            ex.push_back(stats::percentile_uncertainty_exact(stat.alpha, n, fit));
          } catch (const NumericError&) {
            ex.push_back(std::nan(""));
          }
        }
      }
      de.full_value = stats::evaluate(pool, stat, rule);
      dates.push_back(std::move(de));
      exact.push_back(std::move(ex));
    }
    if (o->normalize) {
      const auto norm = stats::normalize_estimates(dates);
      std::vector<std::string> head = {"n", "bias_norm", "mc_unc_norm", "analytic_unc_norm"};
      if (pct) head.push_back("exact_unc_norm");
      csv.row(head);
      for (std::size_t k = 0; k < norm.size(); ++k) {
        std::vector<std::string> r = {std::to_string(norm[k].n), num(norm[k].bias),
                                      num(norm[k].mc_uncertainty), num(norm[k].analytic_uncertainty)};
        if (pct) {
          double s = 0.0;
          for (std::size_t d = 0; d < dates.size(); ++d) s += exact[d][k] / dates[d].full_analytic;
          r.push_back(num(s / static_cast<double>(dates.size())));
        }
        csv.row(r);
      }
    } else {
      std::vector<std::string> head = {"date", "n", "value", "mc_uncertainty", "analytic_uncertainty"};
      if (pct) head.push_back("exact_uncertainty");
      csv.row(head);
      for (std::size_t d = 0; d < dates.size(); ++d)
        for (std::size_t k = 0; k < dates[d].by_size.size(); ++k) {
          const auto& e = dates[d].by_size[k];
          std::vector<std::string> r = {std::to_string(d), std::to_string(e.n), num(e.value),
                                        num(e.mc_uncertainty),
                                        num(e.analytic_uncertainty.value_or(std::nan("")))};
          if (pct) r.push_back(num(exact[d][k]));
          csv.row(r);
        }
    }
    csv.finish();
  });
}

void register_evt(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("evt", "GPD percentile estimates vs ensemble size");
  struct Opts {
    std::string out;
    std::vector<std::string> in;
    std::vector<std::size_t> sizes;
    double alpha = 0.999, threshold_quantile = 0.9;
    std::size_t reps = 2000, min_exceedances = evt::kMinExceedances;
    std::uint64_t seed = 0;
    bool normalize = false;
    PoolSpec pool;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--in", o->in, "Input cubes, one per initialization date")->required();
  sub->add_option("--sizes", o->sizes)->delimiter(',')->required();
  sub->add_option("--alpha", o->alpha)->check(CLI::Range(0.0, 1.0));
  sub->add_option("--threshold-quantile", o->threshold_quantile)->check(CLI::Range(0.0, 1.0));
  sub->add_option("--min-exceedances", o->min_exceedances);
  sub->add_option("--reps", o->reps)->check(CLI::PositiveNumber);
  sub->add_option("--seed", o->seed);
  sub->add_flag("--normalize", o->normalize);
  sub->add_option("--out", o->out, "CSV output (stdout if omitted)");
  add_pool_options(sub, o->pool);
  h.add(sub, [o](Run& run) {
    run.seed = o->seed;
    const evt::ThresholdRule rule{o->threshold_quantile, std::max(o->min_exceedances, evt::kMinExceedances)};
    const stats::Statistic stat{stats::Statistic::Kind::percentile, o->alpha};
    std::vector<stats::DateEstimates> dates;
    for (std::size_t d = 0; d < o->in.size(); ++d) {
      auto pool = load_pool(run, o->in[d], o->pool);
      const stats::Gaussian fit{mean(pool), stddev(pool)};
      stats::DateEstimates de;
      de.full_analytic = stats::percentile_uncertainty_clt(o->alpha, pool.size(), fit);
      for (auto n : o->sizes)
        de.by_size.push_back(evt::evt_percentile_mc(pool, n, o->alpha, o->reps, o->seed + d, rule));
      de.full_value = stats::evaluate(pool, stat, PercentileRule::linear);
      dates.push_back(std::move(de));
    }
    Csv csv(run, o->out);
    if (o->normalize) {
      csv.row({"n", "bias_norm", "mc_unc_norm", "se_norm"});
      for (const auto& e : stats::normalize_estimates(dates))
        csv.row({std::to_string(e.n), num(e.bias), num(e.mc_uncertainty), num(e.analytic_uncertainty)});
    } else {
      csv.row({"date", "n", "value", "mc_uncertainty", "mean_se", "failed_reps"});
      for (std::size_t d = 0; d < dates.size(); ++d)
        for (const auto& e : dates[d].by_size)
          csv.row({std::to_string(d), std::to_string(e.n), num(e.value), num(e.mc_uncertainty),
                   num(e.analytic_uncertainty.value_or(std::nan(""))), std::to_string(e.failed_reps)});
    }
    csv.finish();
  });
}

void register_score(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("score", "CRPS, twCRPS and owCRPS against a verification grid");
  struct Opts {
    std::string metric = "all", in, verification, climatology, out, summary;
    std::uint32_t lead = 0;
    double threshold_quantile = 0.99, step_hours = 6.0;
    std::optional<double> threshold;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--metric", o->metric)->check(CLI::IsMember({"crps", "twcrps", "owcrps", "all"}));
  sub->add_option("--in", o->in, "Ensemble cube")->required();
  sub->add_option("--verification", o->verification, "Single-member verification cube")->required();
  sub->add_option("--climatology", o->climatology, "Climatology cube for the threshold");
  sub->add_option("--threshold-quantile", o->threshold_quantile,
                  "Climatological quantile used as threshold (e.g. 0.95 or 0.99)")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--threshold", o->threshold, "Fixed threshold instead of climatology");
  sub->add_option("--lead", o->lead);
  sub->add_option("--lead-step-hours", o->step_hours, "Hours between lead indices");
  sub->add_option("--out", o->out, "Per-cell CSV (stdout if omitted)");
  sub->add_option("--summary", o->summary, "Aggregate CSV (default <out>.summary.csv)");
  h.add(sub, [o](Run& run) {
    run.input(o->in);
    const store::CubeReader reader(o->in);
    const auto field = store::load_lead(reader, o->lead);
    const auto vgrid = load_grid(run, o->verification);
    check_same_grid(field, vgrid);
    const auto v = grid_lead(vgrid, o->lead);
    std::vector<double> thresholds(field.n_cells());
    if (o->threshold) {
      std::fill(thresholds.begin(), thresholds.end(), *o->threshold);
    } else {
      if (o->climatology.empty()) throw UsageError("--climatology or --threshold is required");
      run.input(o->climatology);
      const auto clim = verify::ClimatologyTable::read(o->climatology);
      check_clim_grid(clim, field.n_lat, field.n_lon);
      const auto [month, hour] = valid_month_hour(reader.header().init_time, o->lead, o->step_hours);
      const double zq = normal_quantile(o->threshold_quantile);
      for (std::size_t c = 0; c < thresholds.size(); ++c) {
        const auto e = clim.lookup(c, month, hour);
        thresholds[c] = e.mean + zq * e.sd;
      }
    }
    const auto rep = scoring::score_grid(field.values, field.n_members, v, thresholds, field.n_lat,
                                         field.n_lon);
    const bool all = o->metric == "all";
    Csv csv(run, o->out);
    std::vector<std::string> head = {"lat", "lon", "threshold"};
    if (all || o->metric == "crps") head.push_back("crps");
    if (all || o->metric == "twcrps") head.push_back("twcrps");
    if (all || o->metric == "owcrps")
      for (const char* c : {"owcrps", "ow_scored", "members_above", "no_member_above"}) head.push_back(c);
    csv.row(head);
    for (std::size_t c = 0; c < field.n_cells(); ++c) {
      std::vector<std::string> r = {std::to_string(c / field.n_lon), std::to_string(c % field.n_lon),
                                    num(thresholds[c])};
      if (all || o->metric == "crps") r.push_back(num(rep.crps[c]));
      if (all || o->metric == "twcrps") r.push_back(num(rep.twcrps[c]));
      if (all || o->metric == "owcrps") {
        const auto& s = rep.owcrps[c];
        r.push_back(s.scored ? num(s.value) : "");
        r.push_back(s.scored ? "1" : "0");
        r.push_back(std::to_string(s.members_above));
        r.push_back(s.no_member_above ? "1" : "0");
      }
      csv.row(r);
    }
    csv.finish();
    std::string summary_path = o->summary;
    if (summary_path.empty() && !o->out.empty()) summary_path = o->out + ".summary.csv";
    Csv sum(run, summary_path);
    sum.row({"metric", "global_mean", "cells", "no_member_above"});
    if (all || o->metric == "crps")
      sum.row({"crps", num(rep.crps_mean), std::to_string(field.n_cells()), ""});
    if (all || o->metric == "twcrps")
      sum.row({"twcrps", num(rep.twcrps_mean), std::to_string(field.n_cells()), ""});
    if (all || o->metric == "owcrps")
      sum.row({"owcrps", num(rep.owcrps_mean), std::to_string(rep.owcrps_cells),
               std::to_string(rep.owcrps_no_member_above)});
    sum.finish();
  });
}

void register_verify(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("verify", "Climatology-referenced ensemble diagnostics");
  struct Opts {
    std::string op, in, verification, climatology, in_b, verification_b, out, mode = "bootstrap95";
    std::uint32_t lead = 0, lat = 0, lon = 0;
    double step_hours = 6.0, threshold_quantile = 0.99;
    std::optional<double> threshold;
    std::vector<std::size_t> sizes;
    std::vector<double> bins = {0, 1, 2, 3, 4};
    double half_width = 0.25;
    std::size_t reps = 100;
    std::uint64_t seed = 0;
    bool no_adjust = false;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--op", o->op)
      ->required()
      ->check(CLI::IsMember({"zscore", "members", "best-rmse", "ci-width", "outlier", "busts", "spread-error"}));
  sub->add_option("--in", o->in, "Ensemble cube");
  sub->add_option("--verification", o->verification, "Single-member verification cube");
  sub->add_option("--climatology", o->climatology);
  sub->add_option("--in-b", o->in_b, "Second ensemble (busts)");
  sub->add_option("--verification-b", o->verification_b, "Verification of the second ensemble");
  sub->add_option("--lead", o->lead);
  sub->add_option("--lat", o->lat);
  sub->add_option("--lon", o->lon);
  sub->add_option("--lead-step-hours", o->step_hours);
  sub->add_option("--threshold", o->threshold, "Event threshold (ci-width)");
  sub->add_option("--threshold-quantile", o->threshold_quantile, "Climatological event quantile")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--sizes", o->sizes)->delimiter(',');
  sub->add_option("--bins", o->bins, "|Z| bin centers")->delimiter(',');
  sub->add_option("--bin-half-width", o->half_width);
  sub->add_option("--reps", o->reps)->check(CLI::PositiveNumber);
  sub->add_option("--seed", o->seed);
  sub->add_option("--mode", o->mode)->check(CLI::IsMember({"bootstrap95", "classic"}));
  sub->add_flag("--no-adjust", o->no_adjust, "Spread-error ratio without the (n+1)/n factor");
  sub->add_option("--out", o->out, "CSV output (stdout if omitted)");
  h.add(sub, [o](Run& run) {
    auto need = [](const std::string& v, const char* flag) {
      if (v.empty()) throw UsageError(std::string(flag) + " is required for this op");
    };
    Csv csv(run, o->out);
    auto open_field = [&](const std::string& path, store::CubeHeader* header) {
      run.input(path);
      const store::CubeReader r(path);
      if (header) *header = r.header();
      return store::load_lead(r, o->lead);
    };
    auto clim_z = [&](const store::CubeHeader& header, std::span<const double> v, std::uint32_t n_lat,
                      std::uint32_t n_lon) {
      need(o->climatology, "--climatology");
      run.input(o->climatology);
      const auto clim = verify::ClimatologyTable::read(o->climatology);
      check_clim_grid(clim, n_lat, n_lon);
      const auto [month, hour] = valid_month_hour(header.init_time, o->lead, o->step_hours);
      return std::make_tuple(clim, month, hour, zscores_for(clim, v, month, hour));
    };

    if (o->op == "zscore") {
      need(o->verification, "--verification");
      need(o->climatology, "--climatology");
      const auto g = load_grid(run, o->verification);
      run.input(o->verification);
      const auto header = store::CubeReader(o->verification).header();
      const auto v = grid_lead(g, o->lead);
      const auto [clim, month, hour, z] = clim_z(header, v, g.n_lat, g.n_lon);
      csv.row({"lat", "lon", "z"});
      for (std::size_t c = 0; c < z.size(); ++c)
        csv.row({std::to_string(c / g.n_lon), std::to_string(c % g.n_lon), num(z[c])});
    } else if (o->op == "members") {
      need(o->in, "--in");
      need(o->verification, "--verification");
      store::CubeHeader header;
      const auto f = open_field(o->in, &header);
      const auto g = load_grid(run, o->verification);
      check_same_grid(f, g);
      const auto v = grid_lead(g, o->lead);
      const auto [clim, month, hour, z] = clim_z(header, v, f.n_lat, f.n_lon);
      csv.row({"lat", "lon", "z_obs", "members_at_least_as_extreme"});
      for (std::size_t c = 0; c < z.size(); ++c) {
        const auto x = f.cell(c);
        const std::vector<double> xs(x.begin(), x.end());
        const auto count = verify::members_at_least_as_extreme(xs, z[c], clim.lookup(c, month, hour));
        csv.row({std::to_string(c / f.n_lon), std::to_string(c % f.n_lon), num(z[c]), std::to_string(count)});
      }
    } else if (o->op == "best-rmse") {
      need(o->in, "--in");
      need(o->verification, "--verification");
      if (o->sizes.empty()) throw UsageError("--sizes is required for best-rmse");
      run.seed = o->seed;
      store::CubeHeader header;
      const auto f = open_field(o->in, &header);
      const auto g = load_grid(run, o->verification);
      check_same_grid(f, g);
      const auto v = grid_lead(g, o->lead);
      const auto z = std::get<3>(clim_z(header, v, f.n_lat, f.n_lon));
      const verify::ZBins bins{o->bins, o->half_width};
      const auto res = verify::best_member_rmse(f, v, z, o->sizes, o->reps, o->seed, bins);
      for (double b : res.skipped_bins) *run.err << "bin " << b << " has no cells; skipped\n";
      csv.row({"bin", "n", "cells", "rmse_mean", "rmse_lo", "rmse_hi"});
      for (const auto& c : res.curves)
        for (std::size_t k = 0; k < c.sizes.size(); ++k)
          csv.row({num(c.center), std::to_string(c.sizes[k]), std::to_string(c.n_cells), num(c.mean[k]),
                   num(c.lo[k]), num(c.hi[k])});
    } else if (o->op == "ci-width") {
      need(o->in, "--in");
      run.seed = o->seed;
      store::CubeHeader header;
      const auto f = open_field(o->in, &header);
      if (o->lat >= f.n_lat || o->lon >= f.n_lon) throw UsageError("cell index out of range");
      const std::size_t cell = std::size_t{o->lat} * f.n_lon + o->lon;
      double t;
      if (o->threshold) {
        t = *o->threshold;
      } else {
        need(o->climatology, "--climatology");
        run.input(o->climatology);
        const auto clim = verify::ClimatologyTable::read(o->climatology);
        check_clim_grid(clim, f.n_lat, f.n_lon);
        const auto [month, hour] = valid_month_hour(header.init_time, o->lead, o->step_hours);
        const auto e = clim.lookup(cell, month, hour);
        t = e.mean + normal_quantile(o->threshold_quantile) * e.sd;
      }
      const auto x = f.cell(cell);
      const std::vector<double> xs(x.begin(), x.end());
      const auto ci = verify::extreme_ci_width(xs, t, o->reps, o->seed);
      csv.row({"threshold", "probability", "ci_lo", "ci_hi", "width"});
      csv.row({num(t), num(ci.probability), num(ci.lo), num(ci.hi), num(ci.width())});
    } else if (o->op == "outlier") {
      need(o->in, "--in");
      need(o->verification, "--verification");
      run.seed = o->seed;
      const auto f = open_field(o->in, nullptr);
      const auto g = load_grid(run, o->verification);
      check_same_grid(f, g);
      std::vector<std::size_t> sizes = o->sizes;
      if (sizes.empty()) sizes.push_back(f.n_members);
      const auto mode = o->mode == "classic" ? verify::OutlierMode::classic : verify::OutlierMode::bootstrap95;
      const auto frac = verify::outlier_statistic(f, grid_lead(g, o->lead), sizes, o->reps, o->seed, mode);
      csv.row({"n", "outlier_fraction"});
      for (std::size_t k = 0; k < sizes.size(); ++k) csv.row({std::to_string(sizes[k]), num(frac[k])});
    } else if (o->op == "busts") {
      need(o->in, "--in");
      need(o->verification, "--verification");
      need(o->in_b, "--in-b");
      need(o->verification_b, "--verification-b");
      store::CubeHeader ha, hb;
      const auto fa = open_field(o->in, &ha);
      const auto fb = open_field(o->in_b, &hb);
      const auto ga = load_grid(run, o->verification);
      const auto gb = load_grid(run, o->verification_b);
      check_same_grid(fa, ga);
      check_same_grid(fb, gb);
      const auto va = grid_lead(ga, o->lead);
      const auto vb = grid_lead(gb, o->lead);
      const auto za = std::get<3>(clim_z(ha, va, fa.n_lat, fa.n_lon));
      const auto zb = std::get<3>(clim_z(hb, vb, fb.n_lat, fb.n_lon));
      const auto m = verify::bust_confusion(fa, va, za, fb, vb, zb);
      csv.row({"both_capture", "a_bust_only", "b_bust_only", "both_bust"});
      csv.row({num(m.both_capture), num(m.a_bust_only), num(m.b_bust_only), num(m.both_bust)});
    } else {  // spread-error
      need(o->in, "--in");
      need(o->verification, "--verification");
      run.input(o->in);
      const store::CubeReader r(o->in);
      const auto g = load_grid(run, o->verification);
      csv.row({"lead", "spread", "rmse", "ratio", "ratio_infinite"});
      for (std::uint32_t l = 0; l < r.dims().n_lead; ++l) {
        const auto f = store::load_lead(r, l);
        check_same_grid(f, g);
        const auto se = verify::spread_error(f, grid_lead(g, l), !o->no_adjust);
        csv.row({std::to_string(l), num(se.spread), num(se.rmse), num(se.ratio), se.ratio_infinite ? "1" : "0"});
      }
    }
    csv.finish();
  });
}

std::vector<double> read_grouped_table(const std::string& path, std::size_t I, std::size_t J) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path + "'");
  std::vector<double> data(I * J, std::nan(""));
  std::vector<std::uint8_t> seen(I * J, 0);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
      throw DataError("line " + std::to_string(line_no) + ": expected checkpoint,member,value");
    }
    std::size_t i, j;
    double v;
    try {
      i = std::stoul(a);
      j = std::stoul(b);
      v = std::stod(c);
    } catch (const std::exception&) {
      if (line_no == 1) continue;  // header
      throw DataError("line " + std::to_string(line_no) + ": not numeric");
    }
    if (i >= I || j >= J)
      throw DataError("line " + std::to_string(line_no) + ": index outside --groups x --per-group");
    if (seen[i * J + j]) throw DataError("line " + std::to_string(line_no) + ": duplicate entry");
    seen[i * J + j] = 1;
    data[i * J + j] = v;
  }
  for (std::size_t k = 0; k < seen.size(); ++k)
    if (!seen[k])
      throw UsageError("unbalanced design: no value for checkpoint " + std::to_string(k / J) +
                       " member " + std::to_string(k % J));
  return data;
}

void register_exchangeability(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("exchangeability", "Random-effects exchangeability ratio with 95% CI");
  struct Opts {
    std::string in, out;
    std::size_t groups = 29, per_group = 256, reps = 2000;
    std::uint64_t seed = 0;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--in", o->in, "CSV of checkpoint,member,value (0-based indices)")->required();
  sub->add_option("--groups", o->groups);
  sub->add_option("--per-group", o->per_group);
  sub->add_option("--reps", o->reps);
  sub->add_option("--seed", o->seed);
  sub->add_option("--out", o->out, "CSV output (stdout if omitted)");
  h.add(sub, [o](Run& run) {
    run.seed = o->seed;
    run.input(o->in);
    const auto data = read_grouped_table(o->in, o->groups, o->per_group);
    auto vc = exch::variance_components(data, o->groups, o->per_group);
    vc.ci95 = exch::ratio_ci(vc, o->reps, o->seed);
    Csv csv(run, o->out);
    csv.row({"I", "J", "grand_mean", "tau2", "sigma_b2", "R", "ci_lo", "ci_hi", "exchangeable"});
    csv.row({std::to_string(vc.I), std::to_string(vc.J), num(vc.grand_mean), num(vc.tau2), num(vc.sigma_b2),
             num(vc.ratio), num(vc.ci95->lo), num(vc.ci95->hi), vc.exchangeable() ? "1" : "0"});
    csv.finish();
  });
}

void register_dkw(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("dkw", "DKW tail bound and expected ECDF error");
  struct Opts {
    std::vector<std::size_t> n;
    std::optional<double> epsilon, g_prime;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--n", o->n, "Sample sizes")->delimiter(',')->required();
  sub->add_option("--epsilon", o->epsilon, "Deviation level for the tail bound");
  sub->add_option("--g-prime", o->g_prime, "Sensitivity of a CDF functional");
  sub->add_option("--out", o->out, "CSV output (stdout if omitted)");
  h.add(sub, [o](Run& run) {
    Csv csv(run, o->out);
    std::vector<std::string> head = {"n", "expected_bound", "asymptotic"};
    if (o->epsilon) head.insert(head.end(), {"epsilon", "tail_raw", "tail_bound"});
    if (o->g_prime) head.push_back("functional_bound");
    csv.row(head);
    for (auto n : o->n) {
      const auto b = dkw::expected_ecdf_error_bound(n);
      std::vector<std::string> r = {std::to_string(n), num(b.full), num(b.asymptotic)};
      if (o->epsilon) {
        const auto t = dkw::dkw_tail(n, *o->epsilon);
        r.insert(r.end(), {num(*o->epsilon), num(t.raw), num(t.bound)});
      }
      if (o->g_prime) r.push_back(num(dkw::functional_error_bound(*o->g_prime, n)));
      csv.row(r);
    }
    csv.finish();
  });
}

// Returns a nonzero exit code through this when a checksum mismatches.
struct ChecksumMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void register_checksum(CLI::App& app, Handlers& h) {
  auto* sub = app.add_subcommand("checksum", "Verify files against a run manifest");
  struct Opts {
    std::string manifest;
    std::vector<std::string> files;
    bool all = false;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--manifest", o->manifest)->required();
  sub->add_option("files", o->files, "Files to check");
  sub->add_flag("--all", o->all, "Check every input and output listed in the manifest");
  h.add(sub, [o](Run& run) {
    const auto m = manifest::RunManifest::read(o->manifest);
    auto files = o->files;
    if (o->all) {
      for (const auto& [p, _] : m.inputs) files.push_back(p);
      for (const auto& [p, _] : m.outputs) files.push_back(p);
    }
    const auto results = manifest::verify_checksums(m, files);
    Csv csv(run, "");
    csv.row({"file", "status", "expected", "actual"});
    bool ok = true;
    for (const auto& r : results) {
      csv.row({r.path, r.match ? "match" : "mismatch", r.expected, r.actual});
      ok = ok && r.match;
    }
    csv.finish();
    if (!ok) throw ChecksumMismatch("checksum mismatch");
  });
}

void write_manifest(const Run& run, double seconds) {
  if (run.outputs.empty()) return;
  manifest::RunManifest m;
  m.command_line = run.argv;
  std::string canon;
  for (std::size_t i = 1; i < run.argv.size(); ++i) canon += run.argv[i] + '\n';
  m.config_hash = manifest::sha256_text(canon + run.config_text);
  m.seed = run.seed;
  m.format_version = store::kFormatVersion;
  for (const auto& p : run.inputs) m.inputs[p.string()] = manifest::sha256_file(p);
  for (const auto& p : run.outputs) m.outputs[p.string()] = manifest::sha256_file(p);
  m.wall_time_seconds = seconds;
  m.write(run.outputs.front().string() + ".manifest.json");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"hens: huge-ensemble generation, storage and statistics"};
  app.require_subcommand(1);
  std::optional<unsigned> threads;
  app.add_option("--threads", threads, "Worker threads (default: HENS_THREADS or all cores)");
  Handlers handlers;
  register_synth(app, handlers);
  register_transpose(app, handlers);
  register_reduce(app, handlers);
  register_gain(app, handlers);
  register_stats(app, handlers);
  register_evt(app, handlers);
  register_score(app, handlers);
  register_verify(app, handlers);
  register_exchangeability(app, handlers);
  register_dkw(app, handlers);
  register_checksum(app, handlers);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  Run r;
  r.argv.assign(argv, argv + argc);
  r.out = &out;
  r.err = &err;
  if (threads) set_thread_count(*threads);
  const auto start = std::chrono::steady_clock::now();
  try {
    for (auto& [sub, fn] : handlers.list)
      if (sub->parsed()) fn(r);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(r, secs);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const ChecksumMismatch& e) {
    err << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  }
  if (threads) set_thread_count(0);
  return 0;
}

}  // namespace hens::cli
