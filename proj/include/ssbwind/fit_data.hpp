#pragma once

#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ssbwind/holland.hpp"
#include "ssbwind/types.hpp"

namespace ssbwind {

// One observed scalar: component c (0 = u, 1 = v) from one source at one site.
struct ScalarObs {
  std::size_t site = 0;
  int component = 0;
  Source source = Source::Satellite;
  double value = 0.0;

  bool operator==(const ScalarObs&) const = default;
};

// The view every sampler works on: unique sites (observation records at the
// same raw coordinates share a site and therefore a mixture label), the
// deterministic mean at each site, and the observed scalars. Component-level
// holdout removes scalars and keeps the sites.
struct FitData {
  std::vector<Site> sites;
  Eigen::MatrixXd mean;  // n_sites x dims
  std::vector<ScalarObs> obs;
  int dims = 2;

  std::size_t n_sites() const { return sites.size(); }

  // Scalar indices grouped by site.
  std::vector<std::vector<std::size_t>> obs_by_site() const {
    std::vector<std::vector<std::size_t>> out(sites.size());
    for (std::size_t k = 0; k < obs.size(); ++k) out[obs[k].site].push_back(k);
    return out;
  }

  double mean_of(const ScalarObs& o) const { return mean(static_cast<Eigen::Index>(o.site), o.component); }

  bool has_source(Source s) const {
    for (const auto& o : obs) {
      if (o.source == s) return true;
    }
    return false;
  }
};

// dims == 2 keeps both wind components; dims == 1 keeps only u (the
// univariate model).
inline FitData make_fit_data(const Dataset& ds, const MeanField& mean_field, int dims = 2) {
  if (dims != 1 && dims != 2) throw ConfigError("fit data: dims must be 1 or 2");
  if (ds.observations.empty()) throw ConfigError("fit data: dataset has no observations");
  FitData fd;
  fd.dims = dims;
  std::map<std::pair<double, double>, std::size_t> index;
  for (const auto& o : ds.observations) {
    const auto key = std::make_pair(o.site.raw_lon, o.site.raw_lat);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, fd.sites.size()).first;
      fd.sites.push_back(o.site);
    }
    for (int c = 0; c < dims; ++c) fd.obs.push_back({it->second, c, o.source, o.wind.component(c)});
  }
  fd.mean.resize(static_cast<Eigen::Index>(fd.sites.size()), dims);
  for (std::size_t i = 0; i < fd.sites.size(); ++i) {
    const WindVector h = mean_field(fd.sites[i]);
    for (int c = 0; c < dims; ++c) fd.mean(static_cast<Eigen::Index>(i), c) = h.component(c);
  }
  return fd;
}

}  // namespace ssbwind
