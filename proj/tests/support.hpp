#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssbwind/fit_data.hpp"

namespace testing_support {

// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

// Asymptotic p-value with Stephens' small-sample correction.
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double t = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * t * t);
    p += term;
    if (std::abs(term) < 1e-16) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

inline double ks_pvalue(const std::vector<double>& x, const std::function<double(double)>& cdf) {
  return ks_pvalue(ks_statistic(x, cdf), x.size());
}

struct Moments1 {
  double mean = 0.0;
  double var = 0.0;
};

// Mean and variance of an unnormalized log density by trapezoid quadrature.
inline Moments1 grid_moments(const std::function<double(double)>& log_density, double lo, double hi, int n) {
  std::vector<double> x(static_cast<std::size_t>(n) + 1), lp(x.size());
  double mx = -INFINITY;
  for (int i = 0; i <= n; ++i) {
    x[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / n;
    lp[static_cast<std::size_t>(i)] = log_density(x[static_cast<std::size_t>(i)]);
    mx = std::max(mx, lp[static_cast<std::size_t>(i)]);
  }
  double z = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = std::exp(lp[i] - mx) * ((i == 0 || i + 1 == x.size()) ? 0.5 : 1.0);
    z += w;
    s1 += w * x[i];
    s2 += w * x[i] * x[i];
  }
  const double mean = s1 / z;
  return {mean, s2 / z - mean * mean};
}

struct Moments2 {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
};

inline Moments2 grid_moments(const std::function<double(double, double)>& log_density, Eigen::Vector2d lo,
                             Eigen::Vector2d hi, int n) {
  Eigen::MatrixXd lp(n + 1, n + 1);
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      lp(i, j) = log_density(lo(0) + (hi(0) - lo(0)) * i / n, lo(1) + (hi(1) - lo(1)) * j / n);
    }
  }
  const double mx = lp.maxCoeff();
  double z = 0.0;
  Eigen::Vector2d s1 = Eigen::Vector2d::Zero();
  Eigen::Matrix2d s2 = Eigen::Matrix2d::Zero();
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      const double wi = (i == 0 || i == n) ? 0.5 : 1.0;
      const double wj = (j == 0 || j == n) ? 0.5 : 1.0;
      const double w = std::exp(lp(i, j) - mx) * wi * wj;
      const Eigen::Vector2d x(lo(0) + (hi(0) - lo(0)) * i / n, lo(1) + (hi(1) - lo(1)) * j / n);
      z += w;
      s1 += w * x;
      s2 += w * x * x.transpose();
    }
  }
  Moments2 m;
  m.mean = s1 / z;
  m.cov = s2 / z - m.mean * m.mean.transpose();
  return m;
}

// FitData over the given unit-square sites with a zero mean field.
inline ssbwind::FitData make_data(const std::vector<ssbwind::Site>& sites, std::vector<ssbwind::ScalarObs> obs,
                                  int dims = 2) {
  ssbwind::FitData d;
  d.sites = sites;
  d.dims = dims;
  d.mean = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sites.size()), dims);
  d.obs = std::move(obs);
  return d;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ssbwind_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
