#pragma once

#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssbwind/io.hpp"
#include "ssbwind/mcmc.hpp"
#include "ssbwind/types.hpp"

namespace ssbwind {

// Per-site posterior predictive summary: mean and central 95% interval for
// each wind component (one column per component).
struct PredictionTable {
  std::vector<Site> sites;
  Eigen::MatrixXd mean;
  Eigen::MatrixXd lo;
  Eigen::MatrixXd hi;

  int dims() const { return static_cast<int>(mean.cols()); }
};

// Summarizes pooled draws. `samples[c]` is draws x sites for component c;
// `means[c]` holds the per-draw conditional means, whose average is the
// reported mean.
inline PredictionTable summarize_predictions(const std::vector<Site>& sites, const std::vector<Eigen::MatrixXd>& samples,
                                             const std::vector<Eigen::MatrixXd>& means) {
  PredictionTable t;
  t.sites = sites;
  const auto n = static_cast<Eigen::Index>(sites.size());
  const auto dims = static_cast<Eigen::Index>(samples.size());
  t.mean.resize(n, dims);
  t.lo.resize(n, dims);
  t.hi.resize(n, dims);
  for (Eigen::Index c = 0; c < dims; ++c) {
    const auto& s = samples[static_cast<std::size_t>(c)];
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> col(static_cast<std::size_t>(s.rows()));
      for (Eigen::Index d = 0; d < s.rows(); ++d) col[static_cast<std::size_t>(d)] = s(d, i);
      t.mean(i, c) = means[static_cast<std::size_t>(c)].col(i).mean();
      t.lo(i, c) = quantile(col, 0.025);
      t.hi(i, c) = quantile(col, 0.975);
    }
  }
  return t;
}

// lon,lat,u_mean,u_lo95,u_hi95,v_mean,v_lo95,v_hi95 (the v columns are
// empty for univariate fits).
inline std::string format_predictions(const PredictionTable& t, const std::string& provenance = {}) {
  std::ostringstream out;
  if (!provenance.empty()) out << "# " << provenance << "\n";
  out << "lon,lat,u_mean,u_lo95,u_hi95,v_mean,v_lo95,v_hi95\n";
  for (std::size_t i = 0; i < t.sites.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << io::format_double(t.sites[i].raw_lon) << ',' << io::format_double(t.sites[i].raw_lat);
    for (Eigen::Index c = 0; c < 2; ++c) {
      if (c < t.dims()) {
        out << ',' << io::format_double(t.mean(r, c)) << ',' << io::format_double(t.lo(r, c)) << ','
            << io::format_double(t.hi(r, c));
      } else {
        out << ",,,";
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace ssbwind
