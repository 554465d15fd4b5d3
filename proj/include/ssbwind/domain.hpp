#pragma once

#include "ssbwind/types.hpp"

namespace ssbwind {

inline void validate_bounds(const Bounds& b) {
  if (!(b.width() > 0.0) || !(b.height() > 0.0)) {
    throw ConfigError("degenerate domain bounds: width " + std::to_string(b.width()) + ", height " +
                      std::to_string(b.height()));
  }
}

// Per-axis affine map of raw degrees onto the unit square.
inline Site normalize_point(const Bounds& b, double lon, double lat) {
  validate_bounds(b);
  return Site{(lon - b.lon0) / b.width(), (lat - b.lat0) / b.height(), lon, lat};
}

inline Site denormalize(const Bounds& b, double s1, double s2) {
  validate_bounds(b);
  return Site{s1, s2, b.lon0 + s1 * b.width(), b.lat0 + s2 * b.height()};
}

// Recomputes (s1, s2) of every site from its raw coordinates, so applying it
// twice is the same as applying it once.
inline Dataset normalize_domain(Dataset ds) {
  const Bounds& b = ds.domain_bounds;
  validate_bounds(b);
  for (std::size_t i = 0; i < ds.observations.size(); ++i) {
    auto& site = ds.observations[i].site;
    if (!b.contains(site.raw_lon, site.raw_lat)) {
      throw ConfigError("observation " + std::to_string(i) + " at (" + std::to_string(site.raw_lon) + ", " +
                        std::to_string(site.raw_lat) + ") lies outside the domain bounds");
    }
    site = normalize_point(b, site.raw_lon, site.raw_lat);
  }
  ds.storm_center = normalize_point(b, ds.storm_center.raw_lon, ds.storm_center.raw_lat);
  return ds;
}

// Regular n1 x n2 grid over the unit square, corners included.
inline std::vector<Site> unit_grid(const Bounds& b, int n1, int n2) {
  if (n1 < 1 || n2 < 1) throw ConfigError("grid dimensions must be positive");
  std::vector<Site> out;
  out.reserve(static_cast<std::size_t>(n1) * static_cast<std::size_t>(n2));
  for (int j = 0; j < n2; ++j) {
    for (int i = 0; i < n1; ++i) {
      const double s1 = n1 == 1 ? 0.5 : static_cast<double>(i) / (n1 - 1);
      const double s2 = n2 == 1 ? 0.5 : static_cast<double>(j) / (n2 - 1);
      out.push_back(denormalize(b, s1, s2));
    }
  }
  return out;
}

}  // namespace ssbwind
