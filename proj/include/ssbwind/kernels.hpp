#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "ssbwind/error.hpp"
#include "ssbwind/rng.hpp"
#include "ssbwind/types.hpp"

namespace ssbwind {

enum class KernelFamily { Uniform, SquaredExponential };
enum class BandwidthModel { Fixed, Exponential, InverseGamma };

// Kernel family plus bandwidth model; the four valid pairings are
//   Uniform / Fixed         eps_j = lambda
//   Uniform / Exponential   eps_j ~ Expo(mean lambda)
//   SqExp   / Fixed         eps_j^2 = lambda^2 / 2
//   SqExp   / InverseGamma  eps_j^2 ~ IG(1.5, lambda^2 / 2)
// with eps_j the full width of the uniform box, or the scale in
// exp(-(s_j - psi_j)^2 / eps_j^2) for the squared exponential.
struct KernelSpec {
  KernelFamily family = KernelFamily::Uniform;
  BandwidthModel bandwidth = BandwidthModel::Fixed;
  double lambda = 0.2;

  void validate(double lambda_max = 1.0) const {
    const bool ok_pair = family == KernelFamily::Uniform
                             ? (bandwidth == BandwidthModel::Fixed || bandwidth == BandwidthModel::Exponential)
                             : (bandwidth == BandwidthModel::Fixed || bandwidth == BandwidthModel::InverseGamma);
    if (!ok_pair) throw ConfigError("kernel: unsupported family/bandwidth pairing");
    if (!(lambda > 0.0 && lambda <= lambda_max)) throw ConfigError("kernel: lambda outside (0, lambda_max]");
  }

  bool operator==(const KernelSpec&) const = default;
};

inline std::string to_string(KernelFamily f) { return f == KernelFamily::Uniform ? "uniform" : "sqexp"; }

inline std::string to_string(BandwidthModel b) {
  switch (b) {
    case BandwidthModel::Fixed: return "fixed";
    case BandwidthModel::Exponential: return "expo";
    case BandwidthModel::InverseGamma: return "invgamma";
  }
  return "fixed";
}

inline KernelFamily parse_kernel_family(const std::string& s) {
  if (s == "uniform") return KernelFamily::Uniform;
  if (s == "sqexp") return KernelFamily::SquaredExponential;
  throw ConfigError("unknown kernel family '" + s + "' (expected uniform or sqexp)");
}

inline BandwidthModel parse_bandwidth_model(const std::string& s) {
  if (s == "fixed") return BandwidthModel::Fixed;
  if (s == "expo") return BandwidthModel::Exponential;
  if (s == "invgamma") return BandwidthModel::InverseGamma;
  throw ConfigError("unknown bandwidth model '" + s + "' (expected fixed, expo or invgamma)");
}

struct KernelInstance {
  std::array<double, 2> knot{0.5, 0.5};
  std::array<double, 2> eps{0.2, 0.2};

  bool operator==(const KernelInstance&) const = default;
};

inline double evaluate(KernelFamily family, const KernelInstance& k, double s1, double s2) {
  const double d1 = s1 - k.knot[0];
  const double d2 = s2 - k.knot[1];
  if (family == KernelFamily::Uniform) {
    return (std::abs(d1) < 0.5 * k.eps[0] && std::abs(d2) < 0.5 * k.eps[1]) ? 1.0 : 0.0;
  }
  return std::exp(-(d1 * d1) / (k.eps[0] * k.eps[0]) - (d2 * d2) / (k.eps[1] * k.eps[1]));
}

inline double evaluate(const KernelSpec& spec, const KernelInstance& k, const Site& s) {
  return evaluate(spec.family, k, s.s1, s.s2);
}

// Bandwidth implied by lambda under the Fixed model.
inline double fixed_bandwidth(KernelFamily family, double lambda) {
  return family == KernelFamily::Uniform ? lambda : lambda / std::numbers::sqrt2;
}

inline double draw_bandwidth(const KernelSpec& spec, double lambda, Engine& eng) {
  switch (spec.bandwidth) {
    case BandwidthModel::Fixed: return fixed_bandwidth(spec.family, lambda);
    case BandwidthModel::Exponential: return random::exponential(eng, lambda);
    case BandwidthModel::InverseGamma: return std::sqrt(random::inv_gamma(eng, 1.5, 0.5 * lambda * lambda));
  }
  return lambda;
}

inline std::array<double, 2> draw_bandwidths(const KernelSpec& spec, double lambda, Engine& eng) {
  const double e1 = draw_bandwidth(spec, lambda, eng);
  const double e2 = draw_bandwidth(spec, lambda, eng);
  return {e1, e2};
}

// Log density of one bandwidth eps (the stored quantity) given lambda, for
// the random bandwidth models. Fixed bandwidths have no density.
inline double bandwidth_log_density(const KernelSpec& spec, double eps, double lambda) {
  if (!(eps > 0.0) || !(lambda > 0.0)) return -std::numeric_limits<double>::infinity();
  switch (spec.bandwidth) {
    case BandwidthModel::Fixed: return 0.0;
    case BandwidthModel::Exponential: return -std::log(lambda) - eps / lambda;
    case BandwidthModel::InverseGamma: {
      // eps^2 ~ IG(1.5, beta) with beta = lambda^2 / 2; the change of
      // variables adds log(2 eps).
      constexpr double shape = 1.5;
      const double beta = 0.5 * lambda * lambda;
      const double d = eps * eps;
      return shape * std::log(beta) - std::lgamma(shape) - (shape + 1.0) * std::log(d) - beta / d +
             std::log(2.0 * eps);
    }
  }
  return 0.0;
}

// Closed-form correlation functions. For the inverse-gamma bandwidth the exact integral
// factorizes over axes, 0.5 prod_j 1 / (1 + (dj / lambda)^2); it coincides with
// the isotropic 0.5 / (1 + (h2 / lambda)^2) whenever one axis displacement is
// zero (see gamma_table_isotropic_invgamma).
inline double gamma_closed_form(const KernelSpec& spec, const Site& s, const Site& sp) {
  const double d1 = std::abs(s.s1 - sp.s1);
  const double d2 = std::abs(s.s2 - sp.s2);
  const double lam = spec.lambda;
  if (spec.family == KernelFamily::Uniform) {
    if (spec.bandwidth == BandwidthModel::Fixed) {
      return std::max(0.0, 1.0 - d1 / lam) * std::max(0.0, 1.0 - d2 / lam);
    }
    return std::exp(-(d1 + d2) / lam);
  }
  if (spec.bandwidth == BandwidthModel::Fixed) {
    return 0.5 * std::exp(-(d1 * d1 + d2 * d2) / (lam * lam));
  }
  return 0.5 / ((1.0 + (d1 / lam) * (d1 / lam)) * (1.0 + (d2 / lam) * (d2 / lam)));
}

// The isotropic approximation for the inverse-gamma bandwidth.
inline double gamma_table_isotropic_invgamma(double lambda, const Site& s, const Site& sp) {
  const double h2sq = (s.s1 - sp.s1) * (s.s1 - sp.s1) + (s.s2 - sp.s2) * (s.s2 - sp.s2);
  return 0.5 / (1.0 + h2sq / (lambda * lambda));
}

struct GammaEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  double c1 = 0.0;  // integral of w(s), area units
  double c2 = 0.0;  // integral of w(s) w(s')
  double c1_se = 0.0;
  double c2_se = 0.0;
};

// Ratio estimator of c2 / c1. Each draw takes eps from its prior and psi
// uniformly over the bounding box of {s, s'} padded by several kernel
// scales, weighted by the box area; the padding holds all kernel mass
// (exactly for uniform kernels, to exp(-36) for the squared exponential), so
// the estimator targets the whole-plane integrals.
inline GammaEstimate gamma_monte_carlo(const KernelSpec& spec, const Site& s, const Site& sp, std::size_t n_draws,
                                       Engine& eng) {
  if (n_draws < 2) throw ConfigError("gamma_monte_carlo: need at least two draws");
  const double pad_scales = spec.family == KernelFamily::Uniform ? 1.0 : 6.0;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n_draws; ++i) {
    KernelInstance k;
    k.eps = draw_bandwidths(spec, spec.lambda, eng);
    const double p1 = pad_scales * k.eps[0];
    const double p2 = pad_scales * k.eps[1];
    const double lo1 = std::min(s.s1, sp.s1) - p1, hi1 = std::max(s.s1, sp.s1) + p1;
    const double lo2 = std::min(s.s2, sp.s2) - p2, hi2 = std::max(s.s2, sp.s2) + p2;
    k.knot = {random::uniform(eng, lo1, hi1), random::uniform(eng, lo2, hi2)};
    const double area = (hi1 - lo1) * (hi2 - lo2);
    const double w = evaluate(spec, k, s);
    const double wp = evaluate(spec, k, sp);
    const double x = area * w;
    const double y = area * w * wp;
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double n = static_cast<double>(n_draws);
  GammaEstimate out;
  out.c1 = sx / n;
  out.c2 = sy / n;
  if (!(out.c1 > 0.0)) throw NumericError("gamma_monte_carlo: kernel never covers the site (c1 <= 0)");
  const double vx = (sxx - n * out.c1 * out.c1) / (n - 1);
  const double vy = (syy - n * out.c2 * out.c2) / (n - 1);
  const double cxy = (sxy - n * out.c1 * out.c2) / (n - 1);
  out.c1_se = std::sqrt(std::max(0.0, vx) / n);
  out.c2_se = std::sqrt(std::max(0.0, vy) / n);
  out.estimate = out.c2 / out.c1;
  const double g = out.estimate;
  const double var = (vy - 2.0 * g * cxy + g * g * vx) / (n * out.c1 * out.c1);
  out.std_error = std::sqrt(std::max(0.0, var));
  return out;
}

}  // namespace ssbwind
