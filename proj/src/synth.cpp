#include "hens/synth.hpp"

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "hens/error.hpp"
#include "hens/numeric.hpp"
#include "hens/parallel.hpp"
#include "hens/rng.hpp"

namespace hens::synth {

using nlohmann::json;

void SynthConfig::validate() const {
  if (n_checkpoints == 0 || members_per_checkpoint == 0)
    throw UsageError("n_checkpoints and members_per_checkpoint must be positive");
  if (std::uint64_t{n_checkpoints} * members_per_checkpoint > 0xFFFFFFFFull)
    throw UsageError("ensemble size does not fit in 32 bits");
  if (n_lead == 0 || n_lat == 0 || n_lon == 0) throw UsageError("grid dims must be positive");
  if (!(member_sd > 0.0) || !std::isfinite(member_sd)) throw UsageError("member_sd must be > 0");
  if (!(checkpoint_sd >= 0.0) || !std::isfinite(checkpoint_sd))
    throw UsageError("checkpoint_sd must be >= 0");
  if (!std::isfinite(base_mean) || !std::isfinite(low_mode_amplitude))
    throw UsageError("base_mean and low_mode_amplitude must be finite");
  if (tail.kind == TailSpec::Kind::gpd) {
    if (!(tail.sigma_g > 0.0)) throw UsageError("tail sigma must be > 0");
    if (!std::isfinite(tail.xi) || !std::isfinite(tail.u)) throw UsageError("bad tail parameters");
  }
  dims().element_count();
}

SynthConfig SynthConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("synth config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("synth config must be a JSON object");
  SynthConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "n_checkpoints") c.n_checkpoints = v.get<std::uint32_t>();
      else if (key == "members_per_checkpoint") c.members_per_checkpoint = v.get<std::uint32_t>();
      else if (key == "n_lead") c.n_lead = v.get<std::uint32_t>();
      else if (key == "n_lat") c.n_lat = v.get<std::uint32_t>();
      else if (key == "n_lon") c.n_lon = v.get<std::uint32_t>();
      else if (key == "member_sd") c.member_sd = v.get<double>();
      else if (key == "checkpoint_sd") c.checkpoint_sd = v.get<double>();
      else if (key == "base_mean") c.base_mean = v.get<double>();
      else if (key == "low_mode_amplitude") c.low_mode_amplitude = v.get<double>();
      else if (key == "variable_name") c.variable_name = v.get<std::string>();
      else if (key == "init_time") c.init_time = v.get<std::string>();
      else if (key == "tail") {
        const auto kind = v.at("kind").get<std::string>();
        if (kind == "gaussian") {
          c.tail.kind = TailSpec::Kind::gaussian;
        } else if (kind == "gpd") {
          c.tail.kind = TailSpec::Kind::gpd;
          c.tail.xi = v.at("xi").get<double>();
          c.tail.sigma_g = v.at("sigma").get<double>();
          c.tail.u = v.at("u").get<double>();
        } else {
          throw UsageError("tail kind must be gaussian or gpd");
        }
      } else {
        throw UsageError("unknown synth config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad synth config value: ") + e.what());
  }
  c.validate();
  return c;
}

std::string SynthConfig::to_json() const {
  json j = {{"seed", seed},
            {"n_checkpoints", n_checkpoints},
            {"members_per_checkpoint", members_per_checkpoint},
            {"n_lead", n_lead},
            {"n_lat", n_lat},
            {"n_lon", n_lon},
            {"member_sd", member_sd},
            {"checkpoint_sd", checkpoint_sd},
            {"base_mean", base_mean},
            {"low_mode_amplitude", low_mode_amplitude},
            {"variable_name", variable_name},
            {"init_time", init_time}};
  if (tail.kind == TailSpec::Kind::gpd)
    j["tail"] = {{"kind", "gpd"}, {"xi", tail.xi}, {"sigma", tail.sigma_g}, {"u", tail.u}};
  else
    j["tail"] = {{"kind", "gaussian"}};
  return j.dump(2);
}

double gpd_quantile_from_survival(double s, double xi, double sigma_g, double u) {
  if (xi == 0.0) return u - sigma_g * std::log(s);
  return u + sigma_g / xi * std::expm1(-xi * std::log(s));
}

double gpd_cdf(double x, double xi, double sigma_g, double u) {
  if (x <= u) return 0.0;
  const double y = (x - u) / sigma_g;
  if (xi == 0.0) return -std::expm1(-y);
  const double z = 1.0 + xi * y;
  if (z <= 0.0) return 1.0;
  return -std::expm1(-std::log(z) / xi);
}

double shaped_noise(const TailSpec& tail, double z) {
  if (tail.kind == TailSpec::Kind::gaussian || z <= tail.u) return z;
  // Conditional survival above u is uniform on (0, 1); map it to a GPD excess.
  const double s = normal_upper_tail(z) / normal_upper_tail(tail.u);
  if (!(s > 0.0)) return z;
  return gpd_quantile_from_survival(s, tail.xi, tail.sigma_g, tail.u);
}

namespace {

double low_mode(const SynthConfig& cfg, std::uint64_t cell) {
  if (cfg.low_mode_amplitude == 0.0) return 0.0;
  const std::uint64_t lon = cell % cfg.n_lon;
  const std::uint64_t lat = (cell / cfg.n_lon) % cfg.n_lat;
  const double x = 2.0 * std::numbers::pi * static_cast<double>(lon) / cfg.n_lon;
  const double y = std::numbers::pi * (static_cast<double>(lat) + 0.5) / cfg.n_lat;
  return cfg.low_mode_amplitude * std::sin(y) * std::cos(x);
}

}  // namespace

double checkpoint_mean(const SynthConfig& cfg, std::uint32_t checkpoint, std::uint64_t cell) {
  double m = cfg.base_mean + low_mode(cfg, cell);
  if (cfg.checkpoint_sd > 0.0)
    m += cfg.checkpoint_sd *
         KeyedGenerator(cfg.seed, RngDomain::checkpoint_mean).normal(cell, checkpoint);
  return m;
}

double member_value(const SynthConfig& cfg, std::uint64_t member, std::uint64_t cell) {
  const auto checkpoint = static_cast<std::uint32_t>(
      (member / cfg.members_per_checkpoint) % cfg.n_checkpoints);
  const double z = KeyedGenerator(cfg.seed, RngDomain::member_noise).normal(cell, member);
  return checkpoint_mean(cfg, checkpoint, cell) + cfg.member_sd * shaped_noise(cfg.tail, z);
}

store::EnsembleCube gen_random_effects_ensemble(const SynthConfig& cfg, store::AxisOrder order) {
  cfg.validate();
  auto cube = store::EnsembleCube::zeros(cfg.dims(), order, cfg.variable_name, cfg.init_time);
  const std::uint32_t n_ens = cfg.n_ensemble();
  const std::uint64_t n_cells = cfg.n_cells();
  const std::uint64_t plane = std::uint64_t{cfg.n_lat} * cfg.n_lon;
  parallel_for(n_cells, [&](std::size_t cell) {
    const auto lead = static_cast<std::uint32_t>(cell / plane);
    const auto lat = static_cast<std::uint32_t>((cell / cfg.n_lon) % cfg.n_lat);
    const auto lon = static_cast<std::uint32_t>(cell % cfg.n_lon);
    for (std::uint32_t e = 0; e < n_ens; ++e)
      cube.at(e, lead, lat, lon) = static_cast<float>(member_value(cfg, e, cell));
  });
  return cube;
}

store::CubeHeader write_random_effects_ensemble(const SynthConfig& cfg,
                                                const std::filesystem::path& path) {
  cfg.validate();
  const store::CubeHeader header{cfg.dims(), store::AxisOrder::gen, cfg.variable_name,
                                 cfg.init_time};
  store::CubeWriter out(path, header);
  const std::uint64_t plane = std::uint64_t{cfg.n_lat} * cfg.n_lon;
  std::vector<float> field(plane);
  for (std::uint32_t e = 0; e < cfg.n_ensemble(); ++e) {
    for (std::uint32_t lead = 0; lead < cfg.n_lead; ++lead) {
      parallel_for(plane, [&](std::size_t c) {
        field[c] = static_cast<float>(member_value(cfg, e, lead * plane + c));
      });
      out.write(store::element_offset(header.dims, header.order, e, lead, 0, 0), field);
    }
  }
  out.commit();
  return header;
}

store::CellGrid gen_exchangeable_verification(const SynthConfig& cfg,
                                              std::uint64_t member_seed_offset) {
  cfg.validate();
  store::CellGrid grid{cfg.n_lead, cfg.n_lat, cfg.n_lon, std::vector<double>(cfg.n_cells())};
  const KeyedGenerator pick(cfg.seed, RngDomain::verification_checkpoint);
  const KeyedGenerator noise(cfg.seed, RngDomain::member_noise);
  const std::uint64_t member = std::uint64_t{cfg.n_ensemble()} + member_seed_offset;
  parallel_for(grid.values.size(), [&](std::size_t cell) {
    const auto blk = pick.block(cell, member_seed_offset);
    const std::uint64_t bits = static_cast<std::uint64_t>(blk[1]) << 32 | blk[0];
    const auto checkpoint = static_cast<std::uint32_t>(
        (static_cast<unsigned __int128>(bits) * cfg.n_checkpoints) >> 64);
    const double z = noise.normal(cell, member);
    grid.values[cell] =
        checkpoint_mean(cfg, checkpoint, cell) + cfg.member_sd * shaped_noise(cfg.tail, z);
  });
  return grid;
}

std::vector<double> gen_gpd_sample(std::size_t n, double xi, double sigma_g, double u,
                                   std::uint64_t seed) {
  if (!(sigma_g > 0.0)) throw UsageError("GPD scale must be positive");
  RngStream rng(seed, 0);
  std::vector<double> out(n);
  // 1 - U with U in [0, 1) lies in (0, 1].
  for (auto& x : out) x = gpd_quantile_from_survival(1.0 - rng.uniform(), xi, sigma_g, u);
  return out;
}

}  // namespace hens::synth
