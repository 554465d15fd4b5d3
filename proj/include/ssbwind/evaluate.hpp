#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ssbwind/error.hpp"
#include "ssbwind/fit_data.hpp"
#include "ssbwind/mcmc.hpp"
#include "ssbwind/rng.hpp"

namespace ssbwind {

struct EmspeResult {
  double total = 0.0;
  // Cells indexed [source][component].
  std::array<std::array<double, 2>, 2> cells{{{0.0, 0.0}, {0.0, 0.0}}};
  std::size_t n_draws = 0;
  std::size_t n_scalars = 0;
};

// Monte Carlo estimate of sum over observed scalars of E[(y - y_rep)^2],
// where y_rep are posterior predictive replicates (draws x targets).
inline EmspeResult emspe(const Eigen::MatrixXd& replicates, const std::vector<ScalarObs>& targets) {
  if (replicates.rows() == 0) throw NumericError("emspe: no retained draws");
  if (static_cast<std::size_t>(replicates.cols()) != targets.size()) throw ConfigError("emspe: replicate/target mismatch");
  EmspeResult r;
  r.n_draws = static_cast<std::size_t>(replicates.rows());
  r.n_scalars = targets.size();
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const double mse =
        (replicates.col(static_cast<Eigen::Index>(k)).array() - targets[k].value).square().mean();
    r.cells[static_cast<std::size_t>(targets[k].source)][static_cast<std::size_t>(targets[k].component)] += mse;
  }
  for (const auto& src : r.cells) {
    for (double c : src) r.total += c;
  }
  return r;
}

struct HoldoutSplit {
  FitData train;
  std::vector<ScalarObs> test;
};

// Sets aside round(fraction * N) observed scalars chosen by a seeded shuffle;
// the training data keeps every site, so held-out scalars stay addressable.
inline HoldoutSplit holdout_split(const FitData& data, double fraction, const RngContract& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout: fraction must lie in (0, 1)");
  const std::size_t n = data.obs.size();
  const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_test == 0) throw ConfigError("holdout: test set would be empty");
  if (n_test >= n) throw ConfigError("holdout: training set would be empty");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Engine eng = make_engine(rng);
  for (std::size_t i = n - 1; i > 0; --i) {
    boost::random::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(idx[i], idx[pick(eng)]);
  }
  std::vector<bool> held(n, false);
  for (std::size_t k = 0; k < n_test; ++k) held[idx[k]] = true;
  HoldoutSplit out;
  out.train = data;
  out.train.obs.clear();
  for (std::size_t k = 0; k < n; ++k) (held[k] ? out.test : out.train.obs).push_back(data.obs[k]);
  return out;
}

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

struct Coverage {
  std::size_t covered = 0;
  std::size_t total = 0;
  double fraction() const { return total ? static_cast<double>(covered) / static_cast<double>(total) : 0.0; }
};

// Central intervals of the replicates for each target.
inline std::vector<Interval> predictive_intervals(const Eigen::MatrixXd& replicates, double level = 0.95) {
  if (replicates.rows() == 0) throw NumericError("predictive intervals: no retained draws");
  std::vector<Interval> out(static_cast<std::size_t>(replicates.cols()));
  const double tail = 0.5 * (1.0 - level);
  for (Eigen::Index k = 0; k < replicates.cols(); ++k) {
    std::vector<double> v(replicates.col(k).data(), replicates.col(k).data() + replicates.rows());
    out[static_cast<std::size_t>(k)] = {quantile(v, tail), quantile(v, 1.0 - tail)};
  }
  return out;
}

// Coverage per component (index 0 = u, 1 = v).
inline std::array<Coverage, 2> interval_coverage(const std::vector<Interval>& intervals,
                                                 const std::vector<ScalarObs>& test) {
  if (intervals.size() != test.size()) throw ConfigError("coverage: interval/target mismatch");
  std::array<Coverage, 2> out{};
  for (std::size_t k = 0; k < test.size(); ++k) {
    auto& c = out[static_cast<std::size_t>(test[k].component)];
    ++c.total;
    if (test[k].value >= intervals[k].lo && test[k].value <= intervals[k].hi) ++c.covered;
  }
  return out;
}

inline std::array<Coverage, 2> interval_coverage(const Eigen::MatrixXd& replicates, const std::vector<ScalarObs>& test) {
  return interval_coverage(predictive_intervals(replicates), test);
}

struct ResidualRow {
  double lon = 0.0;
  double lat = 0.0;
  int component = 0;
  Source source = Source::Satellite;
  std::size_t site = 0;
  double sq_residual = 0.0;
};

// (observation - posterior predictive mean)^2 per observed scalar.
inline std::vector<ResidualRow> residual_map(const Eigen::MatrixXd& replicates, const FitData& data,
                                             const std::vector<ScalarObs>& targets) {
  if (replicates.rows() == 0) throw NumericError("residual map: no retained draws");
  std::vector<ResidualRow> out;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto& t = targets[k];
    const double e = t.value - replicates.col(static_cast<Eigen::Index>(k)).mean();
    out.push_back({data.sites[t.site].raw_lon, data.sites[t.site].raw_lat, t.component, t.source, t.site, e * e});
  }
  return out;
}

inline std::string format_residuals(const std::vector<ResidualRow>& rows, const std::string& provenance = {}) {
  std::ostringstream out;
  if (!provenance.empty()) out << "# " << provenance << "\n";
  out << "lon,lat,component,sq_residual\n";
  for (const auto& r : rows) {
    out << io::format_double(r.lon) << ',' << io::format_double(r.lat) << ',' << component_name(r.component) << ','
        << io::format_double(r.sq_residual) << '\n';
  }
  return out.str();
}

struct EvalReport {
  std::string model;
  EmspeResult emspe;
  std::optional<std::array<Coverage, 2>> coverage;
  std::vector<ResidualRow> residuals;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["model"] = r.model;
  j["emspe"] = r.emspe.total;
  j["emspe_breakdown"] = {{"satellite", {{"u", r.emspe.cells[0][0]}, {"v", r.emspe.cells[0][1]}}},
                          {"buoy", {{"u", r.emspe.cells[1][0]}, {"v", r.emspe.cells[1][1]}}}};
  j["n_draws"] = r.emspe.n_draws;
  j["n_scalars"] = r.emspe.n_scalars;
  if (r.coverage) {
    for (int c = 0; c < 2; ++c) {
      const auto& cv = (*r.coverage)[static_cast<std::size_t>(c)];
      j["holdout_coverage"][std::string(component_name(c))] = {
          {"covered", cv.covered}, {"total", cv.total}, {"fraction", cv.fraction()}};
    }
  }
  return j;
}

// Mean squared residual over scalars whose site lies within `radius_km` of
// the storm center (km from the same flat-earth approximation as the mean
// field).
template <typename DistanceFn>
inline double mean_sq_residual_within(const std::vector<ResidualRow>& rows, const FitData& data, DistanceFn&& dist_km,
                                      double radius_km) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (dist_km(data.sites[r.site]) < radius_km) {
      sum += r.sq_residual;
      ++n;
    }
  }
  if (n == 0) throw NumericError("no observed sites inside the requested radius");
  return sum / static_cast<double>(n);
}

}  // namespace ssbwind
