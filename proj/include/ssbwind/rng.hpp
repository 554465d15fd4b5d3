#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/exponential_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/seed_seq.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "ssbwind/error.hpp"

namespace ssbwind {

// Reproducibility contract: equal (seed, stream_id) give bit-identical draw
// sequences, distinct stream ids give independent streams. The distributions
// below come from Boost.Random so the sequences do not depend on the standard
// library implementation.
struct RngContract {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  // Child stream for a sub-task (chain index, replicate, model slot, ...).
  RngContract derive(std::uint64_t tag) const {
    return RngContract{seed, mix(stream_id * 0x9E3779B97F4A7C15ULL + tag + 1)};
  }

  bool operator==(const RngContract&) const = default;

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

using Engine = boost::random::mt19937_64;

inline Engine make_engine(const RngContract& rng) {
  const auto lo = [](std::uint64_t x) { return static_cast<std::uint32_t>(x & 0xFFFFFFFFULL); };
  const auto hi = [](std::uint64_t x) { return static_cast<std::uint32_t>(x >> 32); };
  boost::random::seed_seq seq{lo(rng.seed), hi(rng.seed), lo(rng.stream_id), hi(rng.stream_id), 0x55B5u};
  return Engine(seq);
}

namespace random {

inline double uniform01(Engine& eng) {
  boost::random::uniform_01<double> dist;
  // uniform_01 may return exactly 0; callers take logs.
  double u = dist(eng);
  while (u <= 0.0) u = dist(eng);
  return u;
}

inline double uniform(Engine& eng, double lo, double hi) { return lo + (hi - lo) * uniform01(eng); }

inline double normal(Engine& eng, double mean = 0.0, double sd = 1.0) {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return mean + sd * dist(eng);
}

inline double exponential(Engine& eng, double mean) {
  boost::random::exponential_distribution<double> dist(1.0);
  return mean * dist(eng);
}

// log of a Gamma(shape, 1) draw. Small shapes go through the
// Gamma(shape + 1) * U^(1/shape) identity in log space so that draws
// that would underflow to zero stay finite.
inline double log_gamma_draw(Engine& eng, double shape) {
  if (!(shape > 0.0)) throw ConfigError("gamma shape must be positive");
  if (shape >= 1.0) {
    boost::random::gamma_distribution<double> dist(shape, 1.0);
    double g = dist(eng);
    while (g <= 0.0) g = dist(eng);
    return std::log(g);
  }
  boost::random::gamma_distribution<double> dist(shape + 1.0, 1.0);
  double g = dist(eng);
  while (g <= 0.0) g = dist(eng);
  return std::log(g) + std::log(uniform01(eng)) / shape;
}

inline double gamma(Engine& eng, double shape, double scale) {
  return scale * std::exp(log_gamma_draw(eng, shape));
}

inline double beta(Engine& eng, double a, double b) {
  const double la = log_gamma_draw(eng, a);
  const double lb = log_gamma_draw(eng, b);
  const double mx = std::max(la, lb);
  const double x = std::exp(la - mx) / (std::exp(la - mx) + std::exp(lb - mx));
  return x;
}

// InvGamma(shape, scale): density scale^shape / Gamma(shape) x^(-shape-1) exp(-scale/x).
// The log is clamped to the finite double range; only the extreme tail of
// vague priors ever reaches it.
inline double inv_gamma(Engine& eng, double shape, double scale) {
  constexpr double kMaxLog = 700.0;
  double lx = std::log(scale) - log_gamma_draw(eng, shape);
  lx = std::clamp(lx, -kMaxLog, kMaxLog);
  return std::exp(lx);
}

inline double chi_squared(Engine& eng, double df) { return 2.0 * gamma(eng, 0.5 * df, 1.0); }

// Index drawn with probability proportional to exp(log_weights[i]).
inline std::size_t categorical_log(Engine& eng, std::span<const double> log_weights) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) mx = std::max(mx, lw);
  if (!std::isfinite(mx)) throw NumericError("categorical draw: every weight is zero");
  double total = 0.0;
  for (double lw : log_weights) total += std::exp(lw - mx);
  double u = uniform01(eng) * total;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    u -= std::exp(log_weights[i] - mx);
    if (u <= 0.0) return i;
  }
  // Rounding left a sliver; return the last positive entry.
  for (std::size_t i = log_weights.size(); i-- > 0;) {
    if (std::isfinite(log_weights[i])) return i;
  }
  return log_weights.size() - 1;
}

inline Eigen::VectorXd mvnormal(Engine& eng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericError("mvnormal: covariance not positive definite");
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(eng);
  return mean + llt.matrixL() * z;
}

// Wishart(df, scale) by the Bartlett decomposition; df > p - 1.
inline Eigen::MatrixXd wishart(Engine& eng, double df, const Eigen::MatrixXd& scale) {
  const Eigen::Index p = scale.rows();
  if (!(df > static_cast<double>(p) - 1.0)) throw ConfigError("wishart: df must exceed dimension - 1");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw NumericError("wishart: scale not positive definite");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(chi_squared(eng, df - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = normal(eng);
  }
  const Eigen::MatrixXd la = llt.matrixL() * a;
  return la * la.transpose();
}

// InvWishart(df, scale): the inverse of Wishart(df, scale^-1).
inline Eigen::MatrixXd inv_wishart(Engine& eng, double df, const Eigen::MatrixXd& scale) {
  const Eigen::MatrixXd w = wishart(eng, df, scale.inverse());
  Eigen::MatrixXd out = w.inverse();
  return 0.5 * (out + out.transpose());
}

}  // namespace random
}  // namespace ssbwind
