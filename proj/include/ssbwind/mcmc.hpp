#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ssbwind/error.hpp"
#include "ssbwind/io.hpp"
#include "ssbwind/rng.hpp"

namespace ssbwind {

// Measurement-error variances indexed [source][component].
using NoiseVar = std::array<std::array<double, 2>, 2>;

struct McmcConfig {
  int n_iter = 5000;
  int burn_in = 1000;
  int thin = 5;
  int n_chains = 1;
  // Proposal adaptation runs during the first `adapt_until` iterations
  // (clamped to the burn-in) and is frozen afterwards.
  int adapt_until = 1000;
  double target_accept = 0.3;
  bool check_invariants = false;

  // Initial random-walk scales.
  double scale_V = 1.0;          // logit V
  double scale_knot = 0.05;      // knot coordinates
  double scale_bandwidth = 0.3;  // log bandwidth
  double scale_lambda = 0.3;     // logit lambda
  double scale_ab = 0.5;         // logit a, b
  double scale_sigma = 0.1;      // Cholesky factor of Sigma (kriging)
  double scale_variance = 0.2;   // log error variances (kriging)

  void validate() const {
    if (n_iter < 1) throw ConfigError("mcmc: n_iter must be positive");
    if (burn_in < 0 || burn_in >= n_iter) throw ConfigError("mcmc: burn_in must lie in [0, n_iter)");
    if (thin < 1) throw ConfigError("mcmc: thin must be >= 1");
    if (n_chains < 1) throw ConfigError("mcmc: n_chains must be >= 1");
    if (adapt_until < 0) throw ConfigError("mcmc: adapt_until must be nonnegative");
    if (!(target_accept > 0.0 && target_accept < 1.0)) throw ConfigError("mcmc: target_accept must lie in (0, 1)");
    for (double s : {scale_V, scale_knot, scale_bandwidth, scale_lambda, scale_ab, scale_sigma, scale_variance}) {
      if (!(s >= 0.0)) throw ConfigError("mcmc: proposal scales must be nonnegative");
    }
  }

  int draws_per_chain() const { return (n_iter - burn_in) / thin; }
  bool adapting(int iter) const { return iter < std::min(adapt_until, burn_in); }
  // Retained iterations: the thin-th, 2 thin-th, ... after burn-in.
  bool retained(int iter) const { return iter >= burn_in && (iter - burn_in + 1) % thin == 0; }
};

// Random-walk scale with Robbins-Monro adaptation toward a target acceptance
// rate; acceptance is counted only outside the adaptation phase.
class ProposalScale {
 public:
  ProposalScale() = default;
  explicit ProposalScale(double scale) : log_scale_(std::log(std::max(scale, 1e-300))), zero_(scale == 0.0) {}

  double scale() const { return zero_ ? 0.0 : std::exp(log_scale_); }

  void record(bool accepted, int iter, const McmcConfig& cfg) {
    if (cfg.adapting(iter)) {
      if (!zero_) {
        const double step = 1.0 / std::pow(iter + 1.0, 0.6);
        log_scale_ = std::clamp(log_scale_ + step * ((accepted ? 1.0 : 0.0) - cfg.target_accept), -20.0, 5.0);
      }
    } else {
      ++tries_;
      if (accepted) ++accepts_;
    }
  }

  long tries() const { return tries_; }
  long accepts() const { return accepts_; }

 private:
  double log_scale_ = 0.0;
  bool zero_ = false;
  long tries_ = 0;
  long accepts_ = 0;
};

inline double acceptance_rate(long accepts, long tries) {
  return tries > 0 ? static_cast<double>(accepts) / static_cast<double>(tries) : 0.0;
}

// Metropolis accept step on a log ratio.
inline bool metropolis_accept(double log_ratio, Engine& eng) {
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  return std::log(random::uniform01(eng)) < log_ratio;
}

inline double logit(double x) { return std::log(x) - std::log1p(-x); }
inline double inv_logit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Linear-interpolation quantile (type 7) of an unsorted sample.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw NumericError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - t) + values[hi] * t;
}

// Monte Carlo standard error of a chain mean by non-overlapping batch means
// (about sqrt(n) batches).
inline double mcse_batch_means(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 4) throw NumericError("mcse: need at least 4 draws");
  const auto batch = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t k = n / batch;
  double total = 0.0;
  std::vector<double> means(k, 0.0);
  for (std::size_t b = 0; b < k; ++b) {
    for (std::size_t i = 0; i < batch; ++i) means[b] += x[b * batch + i];
    means[b] /= static_cast<double>(batch);
    total += means[b];
  }
  const double grand = total / static_cast<double>(k);
  double ss = 0.0;
  for (double m : means) ss += (m - grand) * (m - grand);
  const double var_batch = ss / static_cast<double>(k - 1);
  return std::sqrt(var_batch / static_cast<double>(k));
}

struct ParameterSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0, q05 = 0.0, q50 = 0.0, q95 = 0.0, q975 = 0.0;
};

// Retained draws of one fitted model. Rows of `draws` are draws, columns are
// named parameters; `pm_trace` holds the terminal mass p_m(s) at every site
// for each draw (mixture models only).
struct PosteriorSamples {
  std::string model;
  std::vector<std::string> columns;
  Eigen::MatrixXd draws;
  std::vector<int> chain;
  std::map<std::string, double> acceptance;
  Eigen::MatrixXd pm_trace;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::string> warnings;

  std::size_t n_draws() const { return static_cast<std::size_t>(draws.rows()); }

  Eigen::Index column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ConfigError("posterior samples: no column '" + name + "'");
    return static_cast<Eigen::Index>(it - columns.begin());
  }

  bool has_column(const std::string& name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
  }

  std::vector<double> values(const std::string& name) const {
    const Eigen::Index c = column(name);
    std::vector<double> out(n_draws());
    for (std::size_t d = 0; d < out.size(); ++d) out[d] = draws(static_cast<Eigen::Index>(d), c);
    return out;
  }

  ParameterSummary summary(const std::string& name) const {
    const auto v = values(name);
    if (v.empty()) throw NumericError("posterior samples: no retained draws");
    ParameterSummary s;
    double sum = 0.0, sumsq = 0.0;
    for (double x : v) {
      sum += x;
      sumsq += x * x;
    }
    const double n = static_cast<double>(v.size());
    s.mean = sum / n;
    s.sd = std::sqrt(std::max(0.0, sumsq / n - s.mean * s.mean));
    s.q025 = quantile(v, 0.025);
    s.q05 = quantile(v, 0.05);
    s.q50 = quantile(v, 0.5);
    s.q95 = quantile(v, 0.95);
    s.q975 = quantile(v, 0.975);
    return s;
  }
};

// Stacks per-chain results in chain order.
inline PosteriorSamples merge_chains(std::vector<PosteriorSamples> parts) {
  if (parts.empty()) throw ConfigError("merge_chains: no chains");
  PosteriorSamples out = parts.front();
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.draws.rows();
  out.draws.resize(rows, parts.front().draws.cols());
  out.pm_trace.resize(parts.front().pm_trace.rows() ? rows : 0, parts.front().pm_trace.cols());
  out.chain.clear();
  out.warnings.clear();
  Eigen::Index r = 0;
  std::map<std::string, std::pair<double, double>> acc;
  for (std::size_t c = 0; c < parts.size(); ++c) {
    const auto& p = parts[c];
    out.draws.middleRows(r, p.draws.rows()) = p.draws;
    if (out.pm_trace.rows()) out.pm_trace.middleRows(r, p.pm_trace.rows()) = p.pm_trace;
    r += p.draws.rows();
    out.chain.insert(out.chain.end(), p.chain.begin(), p.chain.end());
    for (const auto& w : p.warnings) out.warnings.push_back("chain " + std::to_string(c) + ": " + w);
    for (const auto& [k, v] : p.acceptance) {
      acc[k].first += v;
      acc[k].second += 1.0;
    }
  }
  out.acceptance.clear();
  for (const auto& [k, v] : acc) out.acceptance[k] = v.first / v.second;
  return out;
}

// Runs `run_chain(c)` for every chain on its own thread and merges in chain
// order. The first exception raised by any chain is rethrown.
inline PosteriorSamples run_chains(int n_chains, const std::function<PosteriorSamples(int)>& run_chain) {
  std::vector<PosteriorSamples> parts(static_cast<std::size_t>(n_chains));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chains));
  if (n_chains == 1) {
    parts[0] = run_chain(0);
  } else {
    std::vector<std::thread> threads;
    for (int c = 0; c < n_chains; ++c) {
      threads.emplace_back([&, c] {
        try {
          parts[static_cast<std::size_t>(c)] = run_chain(c);
        } catch (...) {
          errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return merge_chains(std::move(parts));
}

// --- persistence -------------------------------------------------------------
//
// A posterior directory holds draws.csv (a `chain` column followed by the
// parameter columns), schema.json (model, column order, metadata, warnings),
// acceptance.json and pm_trace.csv (one column per site, empty for models
// without a truncation trace).

inline void save_samples(const PosteriorSamples& s, const std::filesystem::path& dir,
                         const std::string& provenance = {}) {
  std::ostringstream draws;
  if (!provenance.empty()) draws << "# " << provenance << "\n";
  draws << "chain";
  for (const auto& c : s.columns) draws << ',' << c;
  draws << '\n';
  for (Eigen::Index r = 0; r < s.draws.rows(); ++r) {
    draws << (static_cast<std::size_t>(r) < s.chain.size() ? s.chain[static_cast<std::size_t>(r)] : 0);
    for (Eigen::Index c = 0; c < s.draws.cols(); ++c) draws << ',' << io::format_double(s.draws(r, c));
    draws << '\n';
  }
  io::write_file(dir / "draws.csv", draws.str());

  std::ostringstream pm;
  if (!provenance.empty()) pm << "# " << provenance << "\n";
  for (Eigen::Index c = 0; c < s.pm_trace.cols(); ++c) pm << (c ? "," : "") << "site" << c;
  pm << '\n';
  for (Eigen::Index r = 0; r < s.pm_trace.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.pm_trace.cols(); ++c) pm << (c ? "," : "") << io::format_double(s.pm_trace(r, c));
    pm << '\n';
  }
  io::write_file(dir / "pm_trace.csv", pm.str());

  nlohmann::json schema;
  schema["model"] = s.model;
  schema["columns"] = s.columns;
  schema["n_draws"] = s.n_draws();
  schema["meta"] = s.meta;
  schema["warnings"] = s.warnings;
  if (!provenance.empty()) schema["provenance"] = provenance;
  io::write_file(dir / "schema.json", schema.dump(2) + "\n");
  nlohmann::json acc(s.acceptance);
  io::write_file(dir / "acceptance.json", acc.dump(2) + "\n");
}

namespace detail {

inline std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path,
                                                         std::vector<std::string>& header) {
  const std::string text = io::read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::vector<double>> rows;
  header.clear();
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header && !line.empty() && line[0] == '#') continue;
    if (!have_header) {
      have_header = true;
      if (line.empty()) continue;
      for (auto f : io::split(line)) header.emplace_back(io::trim(f));
      continue;
    }
    if (line.empty()) continue;
    const auto fields = io::split(line);
    if (fields.size() != header.size()) throw ParseError(line_no, "row", "wrong number of fields");
    std::vector<double> row(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) row[i] = io::parse_double(fields[i], line_no, header[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline PosteriorSamples load_samples(const std::filesystem::path& dir) {
  PosteriorSamples s;
  const nlohmann::json schema = io::read_json(dir / "schema.json");
  try {
    s.model = schema.at("model").get<std::string>();
    s.columns = schema.at("columns").get<std::vector<std::string>>();
    s.meta = schema.value("meta", nlohmann::json::object());
    s.warnings = schema.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw IoError("schema.json: " + std::string(e.what()));
  }
  std::vector<std::string> header;
  const auto rows = detail::read_numeric_csv(dir / "draws.csv", header);
  if (header.size() != s.columns.size() + 1 || header[0] != "chain") {
    throw IoError("draws.csv: header does not match schema.json");
  }
  for (std::size_t i = 0; i < s.columns.size(); ++i) {
    if (header[i + 1] != s.columns[i]) throw IoError("draws.csv: column '" + header[i + 1] + "' not in schema order");
  }
  s.draws.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(s.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    s.chain.push_back(static_cast<int>(rows[r][0]));
    for (std::size_t c = 0; c < s.columns.size(); ++c) {
      s.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c + 1];
    }
  }
  std::vector<std::string> pm_header;
  const auto pm_rows = detail::read_numeric_csv(dir / "pm_trace.csv", pm_header);
  s.pm_trace.resize(static_cast<Eigen::Index>(pm_rows.size()), static_cast<Eigen::Index>(pm_header.size()));
  for (std::size_t r = 0; r < pm_rows.size(); ++r) {
    for (std::size_t c = 0; c < pm_header.size(); ++c) {
      s.pm_trace(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = pm_rows[r][c];
    }
  }
  const nlohmann::json acc = io::read_json(dir / "acceptance.json");
  for (const auto& [k, v] : acc.items()) s.acceptance[k] = v.get<double>();
  return s;
}

}  // namespace ssbwind
