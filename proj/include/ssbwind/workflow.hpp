#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssbwind/evaluate.hpp"
#include "ssbwind/inference.hpp"
#include "ssbwind/io.hpp"
#include "ssbwind/krige.hpp"
#include "ssbwind/models.hpp"
#include "ssbwind/synthetic.hpp"

namespace ssbwind {

namespace fs = std::filesystem;

// Stream ids per subcommand, so e.g. a fit never reuses the simulation stream.
enum class Stream : std::uint64_t { Simulate = 1, Diagnose = 2, Fit = 3, Predict = 4, Compare = 5, AutoM = 6 };

struct PredictSettings {
  int grid_lon = 25;
  int grid_lat = 25;
  std::optional<fs::path> posterior;  // default: <output_dir>/posterior
  std::size_t max_draws = 0;
  bool tessellation = false;
  std::optional<Source> observation_source;  // unset: latent field
};

struct CompareSettings {
  double holdout_fraction = 0.1;
  std::size_t max_draws = 200;
};

struct DiagnoseSettings {
  double threshold = 0.01;
  std::size_t draws = 1000;
  std::optional<fs::path> posterior;
};

struct AutoM {
  double threshold = 0.01;
  std::size_t draws = 1000;
};

// Everything one invocation needs. `effective` is the merged JSON (file plus
// overrides) the provenance hash is computed from.
struct RunConfig {
  std::optional<fs::path> observations;
  std::optional<fs::path> meta;
  HollandParams holland = TruthConfig{}.holland;
  SSBConfig ssb;
  std::optional<AutoM> auto_m;
  SSBFitOptions fit;
  McmcConfig mcmc;
  ModelKind model = ModelKind::SSB;
  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  TruthConfig truth;
  bool zero_noise = false;
  PredictSettings predict;
  CompareSettings compare;
  DiagnoseSettings diagnose;
  nlohmann::json effective = nlohmann::json::object();

  RngContract rng(Stream s) const { return {seed, static_cast<std::uint64_t>(s)}; }
  bool has_dataset() const { return observations.has_value(); }
};

namespace config_detail {

using nlohmann::json;

inline void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : keys) ok = ok || k == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline std::array<double, 2> pair_of(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError(where + ": expected two numbers");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

inline void parse_holland(const json& j, HollandParams& p) {
  allow_keys(j, "holland",
             {"Pn_mb", "Pc_mb", "rho", "Rmax_km", "B", "center", "heading_deg", "inflow_offset_deg", "heading_adjust"});
  read(j, "Pn_mb", p.Pn_mb, "holland");
  read(j, "Pc_mb", p.Pc_mb, "holland");
  read(j, "rho", p.rho, "holland");
  read(j, "Rmax_km", p.Rmax_km, "holland");
  read(j, "B", p.B, "holland");
  read(j, "heading_adjust", p.heading_adjust, "holland");
  if (j.contains("center")) {
    const auto c = pair_of(j["center"], "holland.center");
    p.center_lon = c[0];
    p.center_lat = c[1];
  }
  double deg = p.heading * 180.0 / std::numbers::pi;
  read(j, "heading_deg", deg, "holland");
  p.heading = deg2rad(deg);
  deg = p.inflow_angle_offset * 180.0 / std::numbers::pi;
  read(j, "inflow_offset_deg", deg, "holland");
  p.inflow_angle_offset = deg2rad(deg);
}

inline void parse_kernel(const json& j, KernelSpec& k) {
  allow_keys(j, "kernel", {"family", "bandwidth", "lambda"});
  std::string s;
  if (j.contains("family")) {
    read(j, "family", s, "kernel");
    k.family = parse_kernel_family(s);
  }
  if (j.contains("bandwidth")) {
    read(j, "bandwidth", s, "kernel");
    k.bandwidth = parse_bandwidth_model(s);
  }
  read(j, "lambda", k.lambda, "kernel");
}

inline Eigen::MatrixXd sigma_from(const json& j, int dims) {
  if (!j.is_array()) throw ConfigError("ssb.Sigma: expected an array");
  if (dims == 1) {
    if (j.size() != 1) throw ConfigError("ssb.Sigma: univariate fits take [tau2]");
    return Eigen::MatrixXd::Constant(1, 1, j[0].get<double>());
  }
  if (j.size() != 3) throw ConfigError("ssb.Sigma: expected [S11, S12, S22]");
  return (Eigen::MatrixXd(2, 2) << j[0].get<double>(), j[1].get<double>(), j[1].get<double>(), j[2].get<double>())
      .finished();
}

inline void parse_ssb(const json& j, SSBConfig& c) {
  allow_keys(j, "ssb", {"m", "a", "b", "response_dim", "Sigma", "knot_prior", "knot_beta_shape"});
  read(j, "m", c.m, "ssb");
  read(j, "a", c.a, "ssb");
  read(j, "b", c.b, "ssb");
  read(j, "response_dim", c.response_dim, "ssb");
  read(j, "knot_beta_shape", c.knot_beta_shape, "ssb");
  if (j.contains("knot_prior")) {
    std::string s;
    read(j, "knot_prior", s, "ssb");
    if (s == "uniform") {
      c.knot_prior = KnotPrior::UniformSquare;
    } else if (s == "beta") {
      c.knot_prior = KnotPrior::BetaSymmetric;
    } else {
      throw ConfigError("ssb.knot_prior: expected 'uniform' or 'beta'");
    }
  }
  c.Sigma = j.contains("Sigma") ? sigma_from(j["Sigma"], c.response_dim)
                                : Eigen::MatrixXd::Identity(c.response_dim, c.response_dim);
}

inline void parse_priors(const json& j, SSBFitOptions& f) {
  allow_keys(j, "priors",
             {"ab_max", "lambda_max", "var_shape", "var_scale", "tau_shape", "tau_scale", "wishart_df", "wishart_scale",
              "bias_var", "sigma_eig_min", "sigma_eig_max", "pm_threshold"});
  auto& p = f.priors;
  read(j, "ab_max", p.ab_max, "priors");
  read(j, "lambda_max", p.lambda_max, "priors");
  read(j, "var_shape", p.var_shape, "priors");
  read(j, "var_scale", p.var_scale, "priors");
  read(j, "tau_shape", p.tau_shape, "priors");
  read(j, "tau_scale", p.tau_scale, "priors");
  read(j, "wishart_df", p.wishart_df, "priors");
  read(j, "wishart_scale", p.wishart_scale, "priors");
  read(j, "bias_var", p.bias_var, "priors");
  read(j, "sigma_eig_min", p.sigma_eig_min, "priors");
  read(j, "sigma_eig_max", p.sigma_eig_max, "priors");
  read(j, "pm_threshold", f.pm_threshold, "priors");
}

inline void parse_mcmc(const json& j, McmcConfig& m) {
  allow_keys(j, "mcmc",
             {"n_iter", "burn_in", "thin", "n_chains", "adapt_until", "target_accept", "check_invariants", "scale_V",
              "scale_knot", "scale_bandwidth", "scale_lambda", "scale_ab", "scale_sigma", "scale_variance"});
  read(j, "n_iter", m.n_iter, "mcmc");
  read(j, "burn_in", m.burn_in, "mcmc");
  read(j, "thin", m.thin, "mcmc");
  read(j, "n_chains", m.n_chains, "mcmc");
  read(j, "adapt_until", m.adapt_until, "mcmc");
  read(j, "target_accept", m.target_accept, "mcmc");
  read(j, "check_invariants", m.check_invariants, "mcmc");
  read(j, "scale_V", m.scale_V, "mcmc");
  read(j, "scale_knot", m.scale_knot, "mcmc");
  read(j, "scale_bandwidth", m.scale_bandwidth, "mcmc");
  read(j, "scale_lambda", m.scale_lambda, "mcmc");
  read(j, "scale_ab", m.scale_ab, "mcmc");
  read(j, "scale_sigma", m.scale_sigma, "mcmc");
  read(j, "scale_variance", m.scale_variance, "mcmc");
}

inline void parse_simulate(const json& j, TruthConfig& t, bool& zero_noise) {
  allow_keys(j, "simulate",
             {"bounds", "grid", "n_buoys", "colocate_buoys", "residual", "noise_var", "bias", "gaussian", "eye_patches",
              "ssb_truth", "zero_noise"});
  read(j, "zero_noise", zero_noise, "simulate");
  read(j, "n_buoys", t.n_buoys, "simulate");
  read(j, "colocate_buoys", t.colocate_buoys, "simulate");
  if (j.contains("bounds")) {
    const auto& b = j["bounds"];
    if (!b.is_array() || b.size() != 4) throw ConfigError("simulate.bounds: expected [lon0, lat0, lon1, lat1]");
    t.bounds = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  }
  if (j.contains("grid")) {
    const auto g = pair_of(j["grid"], "simulate.grid");
    t.grid_lon = static_cast<int>(g[0]);
    t.grid_lat = static_cast<int>(g[1]);
  }
  if (j.contains("residual")) {
    std::string s;
    read(j, "residual", s, "simulate");
    t.residual = parse_residual_truth(s);
  }
  if (j.contains("noise_var")) {
    const auto& n = j["noise_var"];
    allow_keys(n, "simulate.noise_var", {"satellite_u", "satellite_v", "buoy_u", "buoy_v"});
    read(n, "satellite_u", t.noise_var[0][0], "simulate.noise_var");
    read(n, "satellite_v", t.noise_var[0][1], "simulate.noise_var");
    read(n, "buoy_u", t.noise_var[1][0], "simulate.noise_var");
    read(n, "buoy_v", t.noise_var[1][1], "simulate.noise_var");
  }
  if (j.contains("bias")) {
    const auto& b = j["bias"];
    allow_keys(b, "simulate.bias", {"a_u", "a_v"});
    read(b, "a_u", t.bias[0], "simulate.bias");
    read(b, "a_v", t.bias[1], "simulate.bias");
  }
  if (j.contains("gaussian")) {
    const auto& g = j["gaussian"];
    allow_keys(g, "simulate.gaussian", {"Sigma", "lambda"});
    if (g.contains("Sigma")) t.gaussian_Sigma = sigma_from(g["Sigma"], 2);
    read(g, "lambda", t.gaussian_lambda, "simulate.gaussian");
  }
  if (j.contains("eye_patches")) {
    const auto& p = j["eye_patches"];
    allow_keys(p, "simulate.eye_patches", {"n_patches", "region_km", "half_width_km", "offset_sd"});
    read(p, "n_patches", t.patches.n_patches, "simulate.eye_patches");
    read(p, "region_km", t.patches.region_km, "simulate.eye_patches");
    read(p, "offset_sd", t.patches.offset_sd, "simulate.eye_patches");
    if (p.contains("half_width_km")) {
      const auto hw = pair_of(p["half_width_km"], "simulate.eye_patches.half_width_km");
      t.patches.half_width_min_km = hw[0];
      t.patches.half_width_max_km = hw[1];
    }
  }
  if (j.contains("ssb_truth")) {
    const auto& s = j["ssb_truth"];
    allow_keys(s, "simulate.ssb_truth", {"m", "a", "b", "kernel", "Sigma"});
    read(s, "m", t.ssb.m, "simulate.ssb_truth");
    read(s, "a", t.ssb.a, "simulate.ssb_truth");
    read(s, "b", t.ssb.b, "simulate.ssb_truth");
    if (s.contains("kernel")) parse_kernel(s["kernel"], t.ssb.kernel);
    if (s.contains("Sigma")) t.ssb.Sigma = sigma_from(s["Sigma"], 2);
  }
}

inline std::optional<Source> parse_prediction_source(const std::string& s) {
  if (s == "latent") return std::nullopt;
  if (s == "satellite") return Source::Satellite;
  if (s == "buoy") return Source::Buoy;
  throw ConfigError("predict.source: expected latent, satellite or buoy");
}

// Splits `a.b.c=value`; the value is read as JSON when it parses, otherwise
// as a plain string.
inline void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: empty path segment in '" + key + "'");
    if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

}  // namespace config_detail

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Hash of the effective configuration without the output location, so the
// same experiment written to two places carries the same provenance.
inline std::string config_hash(const RunConfig& cfg) {
  nlohmann::json j = cfg.effective;
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

inline std::string provenance(const RunConfig& cfg) { return "config_hash=" + config_hash(cfg); }

// Builds a RunConfig from JSON. Relative paths resolve against `base_dir`
// (the config file's directory).
inline RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir = {}) {
  using namespace config_detail;
  allow_keys(j, "config",
             {"dataset", "holland", "kernel", "ssb", "auto_m", "priors", "mcmc", "model", "seed", "output_dir",
              "simulate", "predict", "compare", "diagnose"});
  RunConfig c;
  c.effective = j;
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    allow_keys(d, "dataset", {"observations", "meta"});
    std::string obs, meta;
    read(d, "observations", obs, "dataset");
    read(d, "meta", meta, "dataset");
    if (obs.empty() || meta.empty()) throw ConfigError("dataset: needs both 'observations' and 'meta'");
    c.observations = resolve(obs);
    c.meta = resolve(meta);
  }
  if (j.contains("holland")) parse_holland(j["holland"], c.holland);
  c.truth.holland = c.holland;
  if (j.contains("kernel")) parse_kernel(j["kernel"], c.ssb.kernel);
  if (j.contains("ssb")) parse_ssb(j["ssb"], c.ssb);
  if (j.contains("auto_m")) {
    if (j.contains("ssb") && j["ssb"].contains("m")) throw ConfigError("config: give either ssb.m or auto_m, not both");
    AutoM a;
    allow_keys(j["auto_m"], "auto_m", {"threshold", "draws"});
    read(j["auto_m"], "threshold", a.threshold, "auto_m");
    read(j["auto_m"], "draws", a.draws, "auto_m");
    c.auto_m = a;
  }
  if (j.contains("priors")) parse_priors(j["priors"], c.fit);
  if (j.contains("mcmc")) parse_mcmc(j["mcmc"], c.mcmc);
  if (j.contains("model")) {
    std::string m;
    read(j, "model", m, "config");
    if (m == "ssb") {
      c.model = ModelKind::SSB;
    } else if (m == "krige") {
      c.model = ModelKind::Krige;
    } else {
      throw ConfigError("model: expected 'ssb' or 'krige', got '" + m + "'");
    }
  }
  read(j, "seed", c.seed, "config");
  std::string out_dir = "out";
  read(j, "output_dir", out_dir, "config");
  c.output_dir = resolve(out_dir);
  if (j.contains("simulate")) parse_simulate(j["simulate"], c.truth, c.zero_noise);
  if (c.zero_noise) c.truth.noise_var = {{{0.0, 0.0}, {0.0, 0.0}}};
  if (j.contains("predict")) {
    const auto& p = j["predict"];
    allow_keys(p, "predict", {"grid", "posterior", "max_draws", "tessellation", "source"});
    if (p.contains("grid")) {
      const auto g = pair_of(p["grid"], "predict.grid");
      c.predict.grid_lon = static_cast<int>(g[0]);
      c.predict.grid_lat = static_cast<int>(g[1]);
    }
    if (p.contains("posterior")) {
      std::string s;
      read(p, "posterior", s, "predict");
      c.predict.posterior = resolve(s);
    }
    read(p, "max_draws", c.predict.max_draws, "predict");
    read(p, "tessellation", c.predict.tessellation, "predict");
    if (p.contains("source")) {
      std::string s;
      read(p, "source", s, "predict");
      c.predict.observation_source = parse_prediction_source(s);
    }
  }
  if (j.contains("compare")) {
    allow_keys(j["compare"], "compare", {"holdout_fraction", "max_draws"});
    read(j["compare"], "holdout_fraction", c.compare.holdout_fraction, "compare");
    read(j["compare"], "max_draws", c.compare.max_draws, "compare");
  }
  if (j.contains("diagnose")) {
    const auto& d = j["diagnose"];
    allow_keys(d, "diagnose", {"threshold", "draws", "posterior"});
    read(d, "threshold", c.diagnose.threshold, "diagnose");
    read(d, "draws", c.diagnose.draws, "diagnose");
    if (d.contains("posterior")) {
      std::string s;
      read(d, "posterior", s, "diagnose");
      c.diagnose.posterior = resolve(s);
    }
  }
  return c;
}

// Reads the config file, applies `--set` overrides, then the --seed / --out
// flags (which are recorded in the effective config). Paths inside the file
// resolve against its directory; --out resolves against the working
// directory.
inline RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides = {},
                                 std::optional<std::uint64_t> seed = {}, std::optional<fs::path> out = {}) {
  nlohmann::json j;
  try {
    j = io::read_json(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& o : overrides) config_detail::apply_override(j, o);
  if (seed) j["seed"] = *seed;
  if (out) j["output_dir"] = fs::absolute(*out).string();
  return parse_run_config(j, path.parent_path());
}

// --- validation ------------------------------------------------------------------

enum class Command { Simulate, Diagnose, Fit, Predict, Compare };

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError(what + " '" + p.string() + "' does not exist");
}

inline fs::path posterior_dir(const RunConfig& c, const std::optional<fs::path>& explicit_dir) {
  return explicit_dir ? *explicit_dir : c.output_dir / "posterior";
}

// All checks that can run before any computation.
inline void validate_for(const RunConfig& c, Command cmd) {
  c.holland.validate();
  c.mcmc.validate();
  c.fit.priors.validate();
  c.ssb.kernel.validate(c.fit.priors.lambda_max);
  if (!c.auto_m) c.ssb.validate(c.fit.priors.lambda_max);
  if (c.auto_m && !(c.auto_m->threshold > 0.0 && c.auto_m->threshold <= 1.0)) {
    throw ConfigError("auto_m.threshold must lie in (0, 1]");
  }
  if (cmd == Command::Simulate) {
    c.truth.validate();
    return;
  }
  if (!c.has_dataset()) throw ConfigError("config: this command needs a 'dataset' section");
  require_file(*c.observations, "dataset.observations");
  require_file(*c.meta, "dataset.meta");
  switch (cmd) {
    case Command::Predict:
      if (c.predict.grid_lon < 1 || c.predict.grid_lat < 1) throw ConfigError("predict.grid: sizes must be positive");
      require_file(posterior_dir(c, c.predict.posterior) / "schema.json", "posterior");
      break;
    case Command::Compare:
      if (c.compare.holdout_fraction != 0.0 && !(c.compare.holdout_fraction > 0.0 && c.compare.holdout_fraction < 1.0)) {
        throw ConfigError("compare.holdout_fraction must be 0 or lie in (0, 1)");
      }
      break;
    case Command::Diagnose:
      if (!(c.diagnose.threshold > 0.0 && c.diagnose.threshold <= 1.0)) {
        throw ConfigError("diagnose.threshold must lie in (0, 1]");
      }
      if (c.diagnose.draws < 1000) throw ConfigError("diagnose.draws must be at least 1000");
      if (c.diagnose.posterior) require_file(*c.diagnose.posterior / "schema.json", "diagnose.posterior");
      break;
    default: break;
  }
}

// --- shared pieces ---------------------------------------------------------------

struct LoadedData {
  Dataset dataset;
  HollandParams holland;  // config profile placed at the dataset's storm center
  FitData fit;
};

inline LoadedData load_data(const RunConfig& c) {
  LoadedData d;
  d.dataset = load_dataset(*c.observations, *c.meta);
  d.holland = c.holland;
  d.holland.center_lon = d.dataset.storm_center.raw_lon;
  d.holland.center_lat = d.dataset.storm_center.raw_lat;
  d.holland.heading = d.dataset.storm_heading;
  d.fit = make_fit_data(d.dataset, holland_mean(d.holland), c.ssb.response_dim);
  return d;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

inline void write_json(const fs::path& p, nlohmann::json j) { io::write_file(p, j.dump(2) + "\n"); }

// SSB configuration with the truncation level fixed, running choose_m when
// the config asks for it.
inline SSBConfig resolved_ssb(const RunConfig& c, const FitData& data) {
  SSBConfig s = c.ssb;
  s.response_dim = data.dims;
  if (c.auto_m) s.m = choose_m(s, data.sites, c.auto_m->threshold, c.rng(Stream::AutoM), c.auto_m->draws).m;
  s.validate(c.fit.priors.lambda_max);
  return s;
}

inline nlohmann::json summary_json(const PosteriorSamples& s, const std::vector<std::string>& names) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& n : names) {
    if (!s.has_column(n)) continue;
    const auto q = s.summary(n);
    out[n] = {{"mean", q.mean}, {"sd", q.sd}, {"q025", q.q025}, {"q50", q.q50}, {"q975", q.q975}};
  }
  return out;
}

inline std::vector<std::string> headline_parameters(const PosteriorSamples& s) {
  std::vector<std::string> out;
  for (const auto& c : s.columns) {
    if (c == "a" || c == "b" || c == "lambda" || c == "tau2" || c.rfind("Sigma", 0) == 0 || c.rfind("sigma2_", 0) == 0 ||
        c.rfind("bias_", 0) == 0) {
      out.push_back(c);
    }
  }
  return out;
}

// --- subcommands -----------------------------------------------------------------

struct SimulateResult {
  SyntheticResult synthetic;
  fs::path observations, meta, truth;
};

inline SimulateResult cmd_simulate(const RunConfig& c) {
  validate_for(c, Command::Simulate);
  ensure_dir(c.output_dir);
  SimulateResult r;
  r.synthetic = generate_synthetic(c.truth, c.rng(Stream::Simulate));
  const std::string prov = provenance(c);
  r.observations = c.output_dir / "observations.csv";
  r.meta = c.output_dir / "meta.json";
  r.truth = c.output_dir / "truth.json";
  save_dataset(r.synthetic.dataset, r.observations, r.meta, prov);
  nlohmann::json truth = truth_to_json(r.synthetic.truth);
  truth["provenance"] = prov;
  write_json(r.truth, truth);
  return r;
}

struct FitResult {
  PosteriorSamples samples;
  SSBConfig ssb;
  fs::path dir;
};

inline FitResult fit_in_memory(const RunConfig& c, const FitData& data) {
  FitResult r;
  if (c.model == ModelKind::Krige) {
    r.ssb = c.ssb;
    r.samples = fit_krige(data, c.mcmc, c.rng(Stream::Fit), KrigePriors::from(c.fit.priors), c.ssb.kernel.lambda);
  } else {
    r.ssb = resolved_ssb(c, data);
    r.samples = fit_ssb(data, r.ssb, c.mcmc, c.rng(Stream::Fit), c.fit);
  }
  return r;
}

// Writes the posterior directory plus fit_summary.json next to it.
inline FitResult cmd_fit(const RunConfig& c) {
  validate_for(c, Command::Fit);
  const LoadedData d = load_data(c);
  ensure_dir(c.output_dir);
  FitResult r = fit_in_memory(c, d.fit);
  r.dir = c.output_dir / "posterior";
  ensure_dir(r.dir);
  const std::string prov = provenance(c);
  save_samples(r.samples, r.dir, prov);
  nlohmann::json s;
  s["provenance"] = prov;
  s["model"] = r.samples.model;
  if (r.samples.model == "ssb") s["m"] = r.ssb.m;
  s["n_draws"] = r.samples.n_draws();
  s["acceptance"] = r.samples.acceptance;
  s["warnings"] = r.samples.warnings;
  s["parameters"] = summary_json(r.samples, headline_parameters(r.samples));
  write_json(c.output_dir / "fit_summary.json", s);
  return r;
}

inline PredictionTable predict_in_memory(const RunConfig& c, const LoadedData& d, const PosteriorSamples& samples) {
  const auto sites = unit_grid(d.dataset.domain_bounds, c.predict.grid_lon, c.predict.grid_lat);
  PredictOptions opt;
  opt.max_draws = c.predict.max_draws;
  opt.tessellation = c.predict.tessellation;
  opt.observation_source = c.predict.observation_source;
  const MeanField mean = holland_mean(d.holland);
  if (samples.model == "krige") return predict_krige(samples, d.fit, sites, mean, c.rng(Stream::Predict), opt);
  return predict_ssb(samples, sites, mean, c.rng(Stream::Predict), opt);
}

// Reads the posterior written by `fit` and predicts on the configured grid.
inline PredictionTable cmd_predict(const RunConfig& c) {
  validate_for(c, Command::Predict);
  const LoadedData d = load_data(c);
  const PosteriorSamples samples = load_samples(posterior_dir(c, c.predict.posterior));
  PredictionTable t = predict_in_memory(c, d, samples);
  ensure_dir(c.output_dir);
  io::write_file(c.output_dir / "predictions.csv", format_predictions(t, provenance(c)));
  return t;
}

struct CompareResult {
  std::vector<ModelEvaluation> models;
  std::vector<std::size_t> ranking;  // indices into `models`, best first
  nlohmann::json report;
};

inline CompareResult compare_in_memory(const RunConfig& c, const LoadedData& d) {
  CompareResult r;
  const SSBConfig base = resolved_ssb(c, d.fit);
  CompareOptions opt;
  opt.holdout_fraction = c.compare.holdout_fraction;
  opt.max_draws = c.compare.max_draws;
  r.models = compare_models(standard_models(base), d.fit, c.mcmc, c.rng(Stream::Compare), opt, c.fit);
  for (std::size_t i = 0; i < r.models.size(); ++i) r.ranking.push_back(i);
  std::stable_sort(r.ranking.begin(), r.ranking.end(), [&](std::size_t x, std::size_t y) {
    return r.models[x].report.emspe.total < r.models[y].report.emspe.total;
  });
  const auto dist = [&](const Site& s) { return radius_km(d.holland, s); };
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t rank = 0; rank < r.ranking.size(); ++rank) {
    const auto& ev = r.models[r.ranking[rank]];
    nlohmann::json m = to_json(ev.report);
    m["rank"] = rank + 1;
    try {
      m["eye_sq_residual"] = mean_sq_residual_within(ev.report.residuals, d.fit, dist, d.holland.Rmax_km);
    } catch (const NumericError&) {
      m["eye_sq_residual"] = nullptr;
    }
    m["parameters"] = summary_json(ev.samples, headline_parameters(ev.samples));
    models.push_back(m);
  }
  r.report = {{"m", base.m}, {"n_scalars", d.fit.obs.size()}, {"models", models}};
  return r;
}

inline std::string format_ranking(const CompareResult& r, const std::string& prov = {}) {
  std::ostringstream out;
  if (!prov.empty()) out << "# " << prov << "\n";
  out << "rank,model,emspe,emspe_per_scalar,coverage_u,coverage_v\n";
  for (std::size_t k = 0; k < r.ranking.size(); ++k) {
    const auto& rep = r.models[r.ranking[k]].report;
    out << k + 1 << ',' << rep.model << ',' << io::format_double(rep.emspe.total) << ','
        << io::format_double(rep.emspe.total / static_cast<double>(rep.emspe.n_scalars));
    for (int c = 0; c < 2; ++c) {
      out << ',';
      if (rep.coverage) out << io::format_double((*rep.coverage)[static_cast<std::size_t>(c)].fraction());
    }
    out << '\n';
  }
  return out.str();
}

// Writes compare.json, ranking.csv and one residual map per model.
inline CompareResult cmd_compare(const RunConfig& c) {
  validate_for(c, Command::Compare);
  const LoadedData d = load_data(c);
  ensure_dir(c.output_dir);
  CompareResult r = compare_in_memory(c, d);
  const std::string prov = provenance(c);
  r.report["provenance"] = prov;
  write_json(c.output_dir / "compare.json", r.report);
  io::write_file(c.output_dir / "ranking.csv", format_ranking(r, prov));
  for (const auto& ev : r.models) {
    io::write_file(c.output_dir / ("residuals_" + ev.report.model + ".csv"), format_residuals(ev.report.residuals, prov));
  }
  return r;
}

// Truncation level, propriety and prior terminal mass over the dataset's
// sites; with a posterior, also its per-site posterior mean of p_m(s).
inline nlohmann::json cmd_diagnose(const RunConfig& c) {
  validate_for(c, Command::Diagnose);
  const LoadedData d = load_data(c);
  ensure_dir(c.output_dir);
  SSBConfig tmpl = c.ssb;
  tmpl.response_dim = d.fit.dims;
  const auto rng = c.rng(Stream::Diagnose);
  const ChooseMResult cm = choose_m(tmpl, d.fit.sites, c.diagnose.threshold, rng.derive(0), c.diagnose.draws);
  tmpl.m = cm.m;
  const ProprietyReport prop = propriety_check(tmpl.a, tmpl.b, tmpl, d.fit.sites, c.diagnose.draws, rng.derive(1));
  // Same stream as the search, so the reported mass is the one choose_m accepted.
  const auto mass = truncation_mass(tmpl, d.fit.sites, c.diagnose.draws, rng.derive(0));
  double max_mean = 0.0, max_q95 = 0.0;
  for (const auto& s : mass) {
    max_mean = std::max(max_mean, s.mean);
    max_q95 = std::max(max_q95, s.q95);
  }
  nlohmann::json j;
  j["provenance"] = provenance(c);
  j["threshold"] = c.diagnose.threshold;
  j["m"] = cm.m;
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& [m, v] : cm.evaluated) ev.push_back({{"m", m}, {"max_mean_pm", v}});
  j["evaluated"] = ev;
  j["propriety"] = {{"proper", prop.proper}, {"E_V", prop.E_V}, {"E_w_lower_bound", prop.E_w_lower_bound}};
  j["prior_terminal_mass"] = {{"max_mean", max_mean}, {"max_q95", max_q95}};
  if (c.diagnose.posterior) {
    const PosteriorSamples s = load_samples(*c.diagnose.posterior);
    if (s.pm_trace.rows() > 0) {
      const Eigen::VectorXd mean = s.pm_trace.colwise().mean().transpose();
      j["posterior_terminal_mass"] = {{"max_mean", mean.maxCoeff()}, {"warnings", s.warnings}};
    }
  }
  write_json(c.output_dir / "diagnose.json", j);
  return j;
}

}  // namespace ssbwind
