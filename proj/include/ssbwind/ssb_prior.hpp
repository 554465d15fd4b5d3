#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/beta.hpp>

#include "ssbwind/kernels.hpp"
#include "ssbwind/rng.hpp"
#include "ssbwind/types.hpp"

namespace ssbwind {

enum class KnotPrior { UniformSquare, BetaSymmetric };

struct SSBConfig {
  int m = 20;  // truncation level
  double a = 1.0;
  double b = 1.0;
  KernelSpec kernel;
  int response_dim = 2;
  // Location covariance: tau^2 as a 1x1 matrix when response_dim == 1.
  Eigen::MatrixXd Sigma = Eigen::MatrixXd::Identity(2, 2);
  KnotPrior knot_prior = KnotPrior::BetaSymmetric;
  double knot_beta_shape = 1.5;

  void validate(double lambda_max = 1.0) const {
    if (m < 1) throw ConfigError("ssb: truncation level m must be >= 1");
    if (!(a > 0.0 && a <= 10.0) || !(b > 0.0 && b <= 10.0)) throw ConfigError("ssb: a, b must lie in (0, 10]");
    if (response_dim != 1 && response_dim != 2) throw ConfigError("ssb: response_dim must be 1 or 2");
    kernel.validate(lambda_max);
    if (Sigma.rows() != response_dim || Sigma.cols() != response_dim) {
      throw ConfigError("ssb: location covariance has the wrong dimension");
    }
    if (!Sigma.isApprox(Sigma.transpose())) throw ConfigError("ssb: location covariance not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
    if (llt.info() != Eigen::Success) throw ConfigError("ssb: location covariance not positive definite");
    if (!(knot_beta_shape > 0.0)) throw ConfigError("ssb: knot Beta shape must be positive");
  }
};

// One truncated stick-breaking realization. The last component is terminal:
// V[m-1] == 1 and its kernel is bypassed (w == 1), so weights sum to one at
// every site.
struct StickSet {
  std::vector<double> V;
  Eigen::MatrixXd theta;  // m x response_dim
  std::vector<KernelInstance> instances;

  int m() const { return static_cast<int>(V.size()); }

  void validate() const {
    if (V.empty()) throw ConfigError("stick set is empty");
    if (static_cast<std::size_t>(theta.rows()) != V.size() || instances.size() != V.size()) {
      throw ConfigError("stick set lists have different lengths");
    }
    if (V.back() != 1.0) throw ConfigError("terminal stick fraction must equal 1");
    for (double v : V) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("stick fraction outside [0, 1]");
    }
  }
};

// --- knot prior -------------------------------------------------------------

inline double draw_knot_coord(const SSBConfig& cfg, Engine& eng) {
  if (cfg.knot_prior == KnotPrior::UniformSquare) return random::uniform01(eng);
  return random::beta(eng, cfg.knot_beta_shape, cfg.knot_beta_shape);
}

inline double knot_log_prior(const SSBConfig& cfg, double x) {
  if (!(x > 0.0 && x < 1.0)) return -std::numeric_limits<double>::infinity();
  if (cfg.knot_prior == KnotPrior::UniformSquare) return 0.0;
  const double c = cfg.knot_beta_shape;
  return (c - 1.0) * (std::log(x) + std::log1p(-x)) - (2.0 * std::lgamma(c) - std::lgamma(2.0 * c));
}

inline double knot_cdf(const SSBConfig& cfg, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (cfg.knot_prior == KnotPrior::UniformSquare) return x;
  return boost::math::cdf(boost::math::beta_distribution<double>(cfg.knot_beta_shape, cfg.knot_beta_shape), x);
}

inline KernelInstance draw_kernel_instance(const SSBConfig& cfg, double lambda, Engine& eng) {
  KernelInstance k;
  k.knot[0] = draw_knot_coord(cfg, eng);
  k.knot[1] = draw_knot_coord(cfg, eng);
  k.eps = draw_bandwidths(cfg.kernel, lambda, eng);
  return k;
}

// --- weights -----------------------------------------------------------------

// p_j from kernel values w_j (w for the terminal component is ignored) and
// stick fractions V_j, accumulating log(1 - w V) to avoid underflow.
inline void stick_weights_from_kernels(std::span<const double> V, std::span<const double> w, std::span<double> out) {
  const std::size_t m = V.size();
  double log_rem = 0.0;
  for (std::size_t j = 0; j + 1 < m; ++j) {
    const double q = w[j] * V[j];
    out[j] = std::exp(log_rem) * q;
    log_rem += std::log1p(-q);
  }
  out[m - 1] = std::exp(log_rem);
}

inline std::vector<double> stick_weights(const SSBConfig& cfg, const StickSet& sticks, const Site& site) {
  const std::size_t m = sticks.V.size();
  std::vector<double> w(m, 1.0), p(m);
  for (std::size_t j = 0; j + 1 < m; ++j) w[j] = evaluate(cfg.kernel, sticks.instances[j], site);
  stick_weights_from_kernels(sticks.V, w, p);
  return p;
}

// Argmax component (ties to the lowest index).
inline int tessellation_assign(const SSBConfig& cfg, const StickSet& sticks, const Site& site) {
  const auto p = stick_weights(cfg, sticks, site);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

// --- prior simulation ----------------------------------------------------------

inline StickSet sample_prior(const SSBConfig& cfg, Engine& eng) {
  const int m = cfg.m;
  StickSet s;
  s.V.resize(static_cast<std::size_t>(m));
  s.instances.resize(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) s.V[static_cast<std::size_t>(j)] = j + 1 < m ? random::beta(eng, cfg.a, cfg.b) : 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(cfg.Sigma);
  const Eigen::MatrixXd L = llt.matrixL();
  s.theta.resize(m, cfg.response_dim);
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd z(cfg.response_dim);
    for (int c = 0; c < cfg.response_dim; ++c) z(c) = random::normal(eng);
    s.theta.row(j) = (L * z).transpose();
  }
  for (int j = 0; j < m; ++j) s.instances[static_cast<std::size_t>(j)] = draw_kernel_instance(cfg, cfg.kernel.lambda, eng);
  return s;
}

// --- truncation diagnostics ------------------------------------------------------

struct TruncationSummary {
  double mean = 0.0;
  double q95 = 0.0;
};

namespace detail {

// Remainder prod_{k < n} (1 - w_k(s) V_k) for every prefix length n in
// [0, max_components] and every site, from one prior draw of the untruncated
// sticks. Draws use a per-draw stream, so the component sequence of a draw is
// the same whatever truncation level is being examined.
inline Eigen::MatrixXd prefix_remainders(const SSBConfig& cfg, std::span<const Site> sites, int max_components,
                                         const RngContract& draw_rng) {
  Engine eng = make_engine(draw_rng);
  Eigen::MatrixXd rem(max_components + 1, static_cast<Eigen::Index>(sites.size()));
  rem.row(0).setOnes();
  for (int k = 0; k < max_components; ++k) {
    const double v = random::beta(eng, cfg.a, cfg.b);
    const KernelInstance inst = draw_kernel_instance(cfg, cfg.kernel.lambda, eng);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const double w = evaluate(cfg.kernel, inst, sites[i]);
      rem(k + 1, static_cast<Eigen::Index>(i)) = rem(k, static_cast<Eigen::Index>(i)) * (1.0 - w * v);
    }
  }
  return rem;
}

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - t) + sorted[hi] * t;
}

}  // namespace detail

// Prior distribution of the terminal mass p_m(s) at each site: mean and 0.95
// quantile over n_draws prior draws.
inline std::vector<TruncationSummary> truncation_mass(const SSBConfig& cfg, std::span<const Site> sites,
                                                      std::size_t n_draws, const RngContract& rng) {
  if (n_draws < 1000) throw ConfigError("truncation_mass: need at least 1000 prior draws");
  const auto n_sites = sites.size();
  std::vector<std::vector<double>> values(n_sites, std::vector<double>(n_draws));
  for (std::size_t d = 0; d < n_draws; ++d) {
    const Eigen::MatrixXd rem = detail::prefix_remainders(cfg, sites, cfg.m - 1, rng.derive(d));
    for (std::size_t i = 0; i < n_sites; ++i) values[i][d] = rem(cfg.m - 1, static_cast<Eigen::Index>(i));
  }
  std::vector<TruncationSummary> out(n_sites);
  for (std::size_t i = 0; i < n_sites; ++i) {
    auto& v = values[i];
    double sum = 0.0;
    for (double x : v) sum += x;
    std::sort(v.begin(), v.end());
    out[i] = {sum / static_cast<double>(n_draws), detail::quantile_sorted(v, 0.95)};
  }
  return out;
}

// E[prod_{i <= m} (1 - w_i(s) V_i)] for each requested m (rows) and site
// (columns): the mass the first m components of the untruncated prior leave
// unassigned.
inline Eigen::MatrixXd untruncated_remainder(const SSBConfig& cfg, std::span<const Site> sites,
                                             std::span<const int> ms, std::size_t n_draws, const RngContract& rng) {
  const int max_m = ms.empty() ? 0 : *std::max_element(ms.begin(), ms.end());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ms.size()), static_cast<Eigen::Index>(sites.size()));
  for (std::size_t d = 0; d < n_draws; ++d) {
    const Eigen::MatrixXd rem = detail::prefix_remainders(cfg, sites, max_m, rng.derive(d));
    for (std::size_t r = 0; r < ms.size(); ++r) acc.row(static_cast<Eigen::Index>(r)) += rem.row(ms[r]);
  }
  return acc / static_cast<double>(n_draws);
}

struct ChooseMResult {
  int m = 1;
  std::vector<std::pair<int, double>> evaluated;  // (m, max over sites of prior-mean p_m)
};

// Smallest m whose prior-mean terminal mass is <= threshold at every site:
// start at `start`, double until the threshold is met, then bisect. The
// prefix construction makes p_m(s) nonincreasing in m draw by draw, so the
// bisection is exact for the Monte Carlo estimate.
inline ChooseMResult choose_m(const SSBConfig& tmpl, std::span<const Site> sites, double threshold,
                              const RngContract& rng, std::size_t n_draws = 1000, int start = 10, int cap = 512) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("choose_m: threshold must lie in (0, 1]");
  ChooseMResult result;
  auto max_mean_pm = [&](int m) {
    SSBConfig cfg = tmpl;
    cfg.m = m;
    const auto summary = truncation_mass(cfg, sites, n_draws, rng);
    double mx = 0.0;
    for (const auto& s : summary) mx = std::max(mx, s.mean);
    result.evaluated.emplace_back(m, mx);
    return mx;
  };
  int lo = 0;  // largest m known to fail (0: none)
  int hi = start;
  while (max_mean_pm(hi) > threshold) {
    lo = hi;
    hi *= 2;
    if (hi > cap) {
      throw NumericError("choose_m: truncation level would exceed the cap of " + std::to_string(cap) +
                         "; raise the cap or put more prior mass on large stick fractions (larger a)");
    }
  }
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    if (max_mean_pm(mid) > threshold) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  result.m = hi;
  return result;
}

struct ProprietyReport {
  bool proper = false;
  double E_V = 0.0;
  double E_w_lower_bound = 0.0;  // min over sites of (mean - 3 se) of E[w(s)]
};

// Executable form of the propriety condition: E(V) = a / (a + b) and E[w(s)]
// over the knot and bandwidth priors must both be positive.
inline ProprietyReport propriety_check(double a, double b, const SSBConfig& cfg, std::span<const Site> sites,
                                       std::size_t n_draws, const RngContract& rng) {
  if (!(a >= 0.0) || !(b > 0.0)) throw ConfigError("propriety_check: need a >= 0 and b > 0");
  ProprietyReport rep;
  rep.E_V = a / (a + b);
  Engine eng = make_engine(rng);
  std::vector<double> sum(sites.size(), 0.0), sumsq(sites.size(), 0.0);
  for (std::size_t d = 0; d < n_draws; ++d) {
    const KernelInstance inst = draw_kernel_instance(cfg, cfg.kernel.lambda, eng);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const double w = evaluate(cfg.kernel, inst, sites[i]);
      sum[i] += w;
      sumsq[i] += w * w;
    }
  }
  const double n = static_cast<double>(n_draws);
  double lower = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const double mean = sum[i] / n;
    const double var = std::max(0.0, sumsq[i] / n - mean * mean);
    lower = std::min(lower, mean - 3.0 * std::sqrt(var / n));
  }
  rep.E_w_lower_bound = lower;
  rep.proper = rep.E_V > 0.0 && lower > 0.0;
  return rep;
}

// --- covariance ------------------------------------------------------------------

// Covariance of y(s), y(s') given the weights: Sigma * sum_j p_j(s) p_j(s').
inline Eigen::MatrixXd conditional_covariance(const SSBConfig& cfg, const StickSet& sticks, const Site& s,
                                              const Site& sp) {
  const auto p = stick_weights(cfg, sticks, s);
  const auto q = stick_weights(cfg, sticks, sp);
  double same = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) same += p[j] * q[j];
  return cfg.Sigma * same;
}

struct MarginalMoments {
  Eigen::MatrixXd var;  // Sigma + diag(noise)
  Eigen::MatrixXd cov;  // Sigma * gamma / (2 (a + b + 1) / (a + 1) - gamma)
  double gamma = 0.0;
};

// Prior moments after integrating out (V, psi, eps, theta) with m -> infinity.
inline MarginalMoments marginal_moments(const SSBConfig& cfg, const Site& s, const Site& sp,
                                        const Eigen::VectorXd& noise_var) {
  if (noise_var.size() != cfg.response_dim) throw ConfigError("marginal_moments: noise dimension mismatch");
  MarginalMoments mm;
  mm.gamma = gamma_closed_form(cfg.kernel, s, sp);
  const double denom = 2.0 * (cfg.a + cfg.b + 1.0) / (cfg.a + 1.0) - mm.gamma;
  mm.var = cfg.Sigma;
  mm.var.diagonal() += noise_var;
  mm.cov = cfg.Sigma * (mm.gamma / denom);
  return mm;
}

}  // namespace ssbwind
