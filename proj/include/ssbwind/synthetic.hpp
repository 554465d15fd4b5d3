#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ssbwind/domain.hpp"
#include "ssbwind/holland.hpp"
#include "ssbwind/rng.hpp"
#include "ssbwind/ssb_prior.hpp"
#include "ssbwind/types.hpp"

namespace ssbwind {

enum class ResidualTruth { None, Gaussian, SSB, EyePatches };

inline std::string to_string(ResidualTruth r) {
  switch (r) {
    case ResidualTruth::None: return "none";
    case ResidualTruth::Gaussian: return "gaussian";
    case ResidualTruth::SSB: return "ssb";
    case ResidualTruth::EyePatches: return "eye_patches";
  }
  return "none";
}

inline ResidualTruth parse_residual_truth(const std::string& s) {
  if (s == "none") return ResidualTruth::None;
  if (s == "gaussian") return ResidualTruth::Gaussian;
  if (s == "ssb") return ResidualTruth::SSB;
  if (s == "eye_patches") return ResidualTruth::EyePatches;
  throw ConfigError("unknown residual truth '" + s + "'");
}

// Piecewise-constant residual blobs around the eye: rectangles (in km) whose
// centers fall within `region_km` of the storm center, each carrying a
// constant (u, v) offset. The first rectangle covering a site wins.
struct EyePatchConfig {
  int n_patches = 12;
  double region_km = 60.0;
  double half_width_min_km = 12.0;
  double half_width_max_km = 30.0;
  double offset_sd = 10.0;
};

struct TruthConfig {
  HollandParams holland;
  Bounds bounds{-89.625, 26.5, -86.375, 29.5};
  int grid_lon = 14;  // satellite grid, 0.25 degree spacing over the default bounds
  int grid_lat = 13;
  int n_buoys = 7;
  bool colocate_buoys = false;

  ResidualTruth residual = ResidualTruth::EyePatches;
  // Gaussian truth: separable Sigma x exp(-||s - s'|| / lambda) on the unit square.
  Eigen::Matrix2d gaussian_Sigma = (Eigen::Matrix2d() << 4.0, -1.0, -1.0, 4.0).finished();
  double gaussian_lambda = 0.2;
  // SSB truth.
  SSBConfig ssb;
  EyePatchConfig patches;

  // Error variances indexed [source][component]: satellite u, v then buoy u, v.
  std::array<std::array<double, 2>, 2> noise_var{{{1.0, 1.0}, {0.5, 0.5}}};
  std::array<double, 2> bias{-4.0, 2.0};  // satellite additive bias (a_u, a_v)

  TruthConfig() {
    holland.center_lon = -88.0;
    holland.center_lat = 28.0;
    ssb.m = 30;
    ssb.kernel = {KernelFamily::Uniform, BandwidthModel::Exponential, 0.2};
    ssb.Sigma = (Eigen::MatrixXd(2, 2) << 9.0, -2.0, -2.0, 9.0).finished();
  }

  void validate() const {
    holland.validate();
    validate_bounds(bounds);
    if (grid_lon < 1 || grid_lat < 1 || n_buoys < 0) throw ConfigError("truth: site counts must be positive");
    if (colocate_buoys && n_buoys > grid_lon * grid_lat) throw ConfigError("truth: more buoys than grid sites");
    for (const auto& src : noise_var) {
      for (double v : src) {
        if (!(v >= 0.0)) throw ConfigError("truth: error variances must be nonnegative");
      }
    }
    if (!(gaussian_lambda > 0.0)) throw ConfigError("truth: gaussian lambda must be positive");
    if (residual == ResidualTruth::SSB) ssb.validate();
    if (residual == ResidualTruth::Gaussian) {
      Eigen::LLT<Eigen::Matrix2d> llt(gaussian_Sigma);
      if (llt.info() != Eigen::Success) throw ConfigError("truth: gaussian Sigma not positive definite");
    }
    if (!(patches.offset_sd >= 0.0) || !(patches.half_width_min_km > 0.0) ||
        !(patches.half_width_max_km >= patches.half_width_min_km) || patches.n_patches < 0) {
      throw ConfigError("truth: invalid eye patch settings");
    }
  }
};

struct TrueSite {
  Site site;
  WindVector holland;
  WindVector residual;
  WindVector latent;  // holland + residual
};

struct TrueField {
  std::vector<TrueSite> sites;  // unique observation sites, first-seen order
  std::vector<std::size_t> site_of_observation;
  TruthConfig config;
  RngContract rng;
};

// Exponential correlation exp(-||s - s'|| / lambda) on unit-square coordinates.
inline Eigen::MatrixXd exp_correlation(const std::vector<Site>& sites, double lambda) {
  const auto n = static_cast<Eigen::Index>(sites.size());
  Eigen::MatrixXd r(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    r(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const auto& a = sites[static_cast<std::size_t>(i)];
      const auto& b = sites[static_cast<std::size_t>(j)];
      r(i, j) = r(j, i) = std::exp(-std::hypot(a.s1 - b.s1, a.s2 - b.s2) / lambda);
    }
  }
  return r;
}

namespace detail {

inline std::vector<WindVector> eye_patch_residuals(const TruthConfig& cfg, const std::vector<Site>& sites, Engine& eng) {
  struct Patch {
    double east, north, half_e, half_n;
    WindVector offset;
  };
  std::vector<Patch> patches;
  const auto& pc = cfg.patches;
  for (int k = 0; k < pc.n_patches; ++k) {
    const double r = pc.region_km * std::sqrt(random::uniform01(eng));
    const double ang = 2.0 * std::numbers::pi * random::uniform01(eng);
    Patch p;
    p.east = r * std::sin(ang);
    p.north = r * std::cos(ang);
    p.half_e = random::uniform(eng, pc.half_width_min_km, pc.half_width_max_km);
    p.half_n = random::uniform(eng, pc.half_width_min_km, pc.half_width_max_km);
    p.offset.u = random::normal(eng, 0.0, pc.offset_sd);
    p.offset.v = random::normal(eng, 0.0, pc.offset_sd);
    patches.push_back(p);
  }
  std::vector<WindVector> out(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const auto d = displacement_km(cfg.holland, sites[i]);
    for (const auto& p : patches) {
      if (std::abs(d.east_km - p.east) < p.half_e && std::abs(d.north_km - p.north) < p.half_n) {
        out[i] = p.offset;
        break;
      }
    }
  }
  return out;
}

inline std::vector<WindVector> gaussian_residuals(const TruthConfig& cfg, const std::vector<Site>& sites, Engine& eng) {
  const auto n = static_cast<Eigen::Index>(sites.size());
  const Eigen::MatrixXd corr = exp_correlation(sites, cfg.gaussian_lambda);
  Eigen::MatrixXd cov(2 * n, 2 * n);
  for (int c = 0; c < 2; ++c) {
    for (int d = 0; d < 2; ++d) cov.block(c * n, d * n, n, n) = cfg.gaussian_Sigma(c, d) * corr;
  }
  cov.diagonal().array() += 1e-10 * cov.diagonal().mean();
  const Eigen::VectorXd z = random::mvnormal(eng, Eigen::VectorXd::Zero(2 * n), cov);
  std::vector<WindVector> out(sites.size());
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = {z(i), z(n + i)};
  return out;
}

inline std::vector<WindVector> ssb_residuals(const TruthConfig& cfg, const std::vector<Site>& sites, Engine& eng) {
  const StickSet sticks = sample_prior(cfg.ssb, eng);
  std::vector<WindVector> out(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const auto p = stick_weights(cfg.ssb, sticks, sites[i]);
    std::vector<double> lp(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) lp[j] = std::log(p[j]);
    const auto g = static_cast<Eigen::Index>(random::categorical_log(eng, lp));
    out[i] = {sticks.theta(g, 0), cfg.ssb.response_dim > 1 ? sticks.theta(g, 1) : 0.0};
  }
  return out;
}

}  // namespace detail

struct SyntheticResult {
  Dataset dataset;
  TrueField truth;
};

// Draws observations from the measurement model
//   satellite: (u, v) = H + R + (a_u, a_v) + noise,   buoy: (u, v) = H + R + noise
// at a regular satellite grid plus buoy sites, returning the latent field too.
inline SyntheticResult generate_synthetic(const TruthConfig& cfg, const RngContract& rng) {
  cfg.validate();
  Engine eng = make_engine(rng);
  const Bounds& b = cfg.bounds;

  std::vector<Site> grid = unit_grid(b, cfg.grid_lon, cfg.grid_lat);
  std::vector<Site> buoys;
  if (cfg.colocate_buoys) {
    std::vector<std::size_t> idx(grid.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int k = 0; k < cfg.n_buoys; ++k) {
      const auto pick = k + static_cast<std::size_t>(random::uniform01(eng) * static_cast<double>(idx.size() - k));
      std::swap(idx[static_cast<std::size_t>(k)], idx[std::min(pick, idx.size() - 1)]);
      buoys.push_back(grid[idx[static_cast<std::size_t>(k)]]);
    }
  } else {
    for (int k = 0; k < cfg.n_buoys; ++k) {
      buoys.push_back(normalize_point(b, random::uniform(eng, b.lon0, b.lon1), random::uniform(eng, b.lat0, b.lat1)));
    }
  }

  // Unique sites: grid first, then buoys not co-located with the grid.
  std::vector<Site> sites = grid;
  std::vector<std::size_t> buoy_site(buoys.size());
  for (std::size_t k = 0; k < buoys.size(); ++k) {
    std::size_t found = sites.size();
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (sites[i].raw_lon == buoys[k].raw_lon && sites[i].raw_lat == buoys[k].raw_lat) {
        found = i;
        break;
      }
    }
    if (found == sites.size()) sites.push_back(buoys[k]);
    buoy_site[k] = found;
  }

  std::vector<WindVector> residual;
  switch (cfg.residual) {
    case ResidualTruth::None: residual.assign(sites.size(), WindVector{}); break;
    case ResidualTruth::Gaussian: residual = detail::gaussian_residuals(cfg, sites, eng); break;
    case ResidualTruth::SSB: residual = detail::ssb_residuals(cfg, sites, eng); break;
    case ResidualTruth::EyePatches: residual = detail::eye_patch_residuals(cfg, sites, eng); break;
  }

  SyntheticResult out;
  out.truth.config = cfg;
  out.truth.rng = rng;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    TrueSite ts;
    ts.site = sites[i];
    ts.holland = wind_components(cfg.holland, sites[i]);
    ts.residual = residual[i];
    ts.latent = {ts.holland.u + ts.residual.u, ts.holland.v + ts.residual.v};
    out.truth.sites.push_back(ts);
  }

  auto emit = [&](std::size_t site_index, Source src) {
    const auto s = static_cast<std::size_t>(src);
    const TrueSite& ts = out.truth.sites[site_index];
    const double bu = src == Source::Satellite ? cfg.bias[0] : 0.0;
    const double bv = src == Source::Satellite ? cfg.bias[1] : 0.0;
    Observation o;
    o.site = ts.site;
    o.source = src;
    o.wind.u = ts.latent.u + bu + std::sqrt(cfg.noise_var[s][0]) * random::normal(eng);
    o.wind.v = ts.latent.v + bv + std::sqrt(cfg.noise_var[s][1]) * random::normal(eng);
    out.dataset.observations.push_back(o);
    out.truth.site_of_observation.push_back(site_index);
  };
  for (std::size_t i = 0; i < grid.size(); ++i) emit(i, Source::Satellite);
  for (std::size_t k = 0; k < buoys.size(); ++k) emit(buoy_site[k], Source::Buoy);

  out.dataset.domain_bounds = b;
  out.dataset.storm_center = normalize_point(b, cfg.holland.center_lon, cfg.holland.center_lat);
  out.dataset.storm_heading = cfg.holland.heading;
  out.dataset = normalize_domain(std::move(out.dataset));
  return out;
}

inline nlohmann::json truth_to_json(const TrueField& tf) {
  using nlohmann::json;
  const auto& c = tf.config;
  json sites = json::array();
  for (const auto& s : tf.sites) {
    sites.push_back({{"lon", s.site.raw_lon},
                     {"lat", s.site.raw_lat},
                     {"s1", s.site.s1},
                     {"s2", s.site.s2},
                     {"u", s.latent.u},
                     {"v", s.latent.v},
                     {"holland_u", s.holland.u},
                     {"holland_v", s.holland.v},
                     {"residual_u", s.residual.u},
                     {"residual_v", s.residual.v}});
  }
  json params = {
      {"holland",
       {{"Pn_mb", c.holland.Pn_mb},
        {"Pc_mb", c.holland.Pc_mb},
        {"rho", c.holland.rho},
        {"Rmax_km", c.holland.Rmax_km},
        {"B", c.holland.B},
        {"center", {c.holland.center_lon, c.holland.center_lat}},
        {"heading_deg", c.holland.heading * 180.0 / std::numbers::pi},
        {"inflow_offset_deg", c.holland.inflow_angle_offset * 180.0 / std::numbers::pi}}},
      {"bounds", {c.bounds.lon0, c.bounds.lat0, c.bounds.lon1, c.bounds.lat1}},
      {"grid", {c.grid_lon, c.grid_lat}},
      {"n_buoys", c.n_buoys},
      {"colocate_buoys", c.colocate_buoys},
      {"residual", to_string(c.residual)},
      {"noise_var",
       {{"satellite_u", c.noise_var[0][0]},
        {"satellite_v", c.noise_var[0][1]},
        {"buoy_u", c.noise_var[1][0]},
        {"buoy_v", c.noise_var[1][1]}}},
      {"bias", {{"a_u", c.bias[0]}, {"a_v", c.bias[1]}}},
      {"seed", tf.rng.seed},
      {"stream_id", tf.rng.stream_id}};
  if (c.residual == ResidualTruth::Gaussian) {
    params["gaussian"] = {{"Sigma", {c.gaussian_Sigma(0, 0), c.gaussian_Sigma(0, 1), c.gaussian_Sigma(1, 1)}},
                          {"lambda", c.gaussian_lambda}};
  }
  if (c.residual == ResidualTruth::EyePatches) {
    params["eye_patches"] = {{"n_patches", c.patches.n_patches},
                             {"region_km", c.patches.region_km},
                             {"half_width_km", {c.patches.half_width_min_km, c.patches.half_width_max_km}},
                             {"offset_sd", c.patches.offset_sd}};
  }
  if (c.residual == ResidualTruth::SSB) {
    params["ssb"] = {{"m", c.ssb.m},
                     {"a", c.ssb.a},
                     {"b", c.ssb.b},
                     {"kernel", to_string(c.ssb.kernel.family)},
                     {"bandwidth", to_string(c.ssb.kernel.bandwidth)},
                     {"lambda", c.ssb.kernel.lambda}};
  }
  return json{{"sites", sites}, {"parameters", params}};
}

}  // namespace ssbwind
