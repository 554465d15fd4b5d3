#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "ssbwind/types.hpp"

namespace ssbwind {

inline constexpr double kEarthRadiusKm = 6371.0088;
inline constexpr double kKmPerDegree = kEarthRadiusKm * std::numbers::pi / 180.0;

// Deterministic Holland vortex. Pressures in mb, density in kg/m^3, radius of
// maximum wind in km; angles in radians.
struct HollandParams {
  double Pn_mb = 1010.0;
  double Pc_mb = 939.0;
  double rho = 1.2;
  double Rmax_km = 49.0;
  double B = 1.9;
  double center_lon = 0.0;
  double center_lat = 0.0;
  double heading = 0.0;              // storm direction, clockwise from north
  double inflow_angle_offset = 0.0;  // rotation of the tangent toward the center, [0, pi/2)
  bool heading_adjust = false;       // when set, the direction field is rotated by `heading`

  void validate() const {
    if (!(Pn_mb >= Pc_mb)) throw ConfigError("holland: ambient pressure below central pressure");
    if (!(rho > 0.0)) throw ConfigError("holland: air density must be positive");
    if (!(Rmax_km > 0.0)) throw ConfigError("holland: Rmax must be positive");
    if (!(B > 0.0)) throw ConfigError("holland: B must be positive");
    if (!(inflow_angle_offset >= 0.0 && inflow_angle_offset < std::numbers::pi / 2)) {
      throw ConfigError("holland: inflow angle offset must lie in [0, pi/2)");
    }
  }
};

// Local east/north displacement (km) of a site from the storm center,
// equirectangular at the center latitude.
struct Displacement {
  double east_km;
  double north_km;
};

inline Displacement displacement_km(const HollandParams& p, const Site& site) {
  const double coslat = std::cos(p.center_lat * std::numbers::pi / 180.0);
  return {(site.raw_lon - p.center_lon) * kKmPerDegree * coslat, (site.raw_lat - p.center_lat) * kKmPerDegree};
}

inline double radius_km(const HollandParams& p, const Site& site) {
  const auto d = displacement_km(p, site);
  return std::hypot(d.east_km, d.north_km);
}

// Holland wind speed (m/s) at radius r km. The pressure deficit is converted
// from mb to Pa. H(0) is the r -> 0+ limit, zero.
inline double wind_speed(const HollandParams& p, double r_km) {
  if (r_km < 0.0) throw ConfigError("holland: negative radius");
  if (r_km == 0.0) return 0.0;
  const double x = std::pow(p.Rmax_km / r_km, p.B);
  if (!std::isfinite(x)) return 0.0;
  const double deficit_pa = (p.Pn_mb - p.Pc_mb) * 100.0;
  const double h2 = (p.B / p.rho) * x * deficit_pa * std::exp(-x);
  return h2 > 0.0 ? std::sqrt(h2) : 0.0;
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  if (a >= two_pi) a -= two_pi;
  return a;
}

// Direction the wind blows toward, clockwise from north, so that
// (u, v) = H (sin phi, cos phi). Counterclockwise (Northern Hemisphere)
// circulation, rotated inward by the inflow offset and, optionally, by the
// storm heading.
inline double inflow_angle(const HollandParams& p, const Site& site) {
  const auto d = displacement_km(p, site);
  const double r = std::hypot(d.east_km, d.north_km);
  if (r == 0.0) throw ConfigError("holland: inflow angle undefined at the storm center");
  // Counterclockwise tangent (-north, east) and inward normal (-east, -north), unit length.
  const double te = -d.north_km / r, tn = d.east_km / r;
  const double ie = -d.east_km / r, in = -d.north_km / r;
  const double ca = std::cos(p.inflow_angle_offset), sa = std::sin(p.inflow_angle_offset);
  const double de = ca * te + sa * ie;
  const double dn = ca * tn + sa * in;
  double phi = std::atan2(de, dn);
  if (p.heading_adjust) phi += p.heading;
  return wrap_angle(phi);
}

inline WindVector wind_components(const HollandParams& p, const Site& site) {
  const double r = radius_km(p, site);
  if (r == 0.0) return {0.0, 0.0};
  const double h = wind_speed(p, r);
  const double phi = inflow_angle(p, site);
  return {h * std::sin(phi), h * std::cos(phi)};
}

// Deterministic mean field evaluated per site.
using MeanField = std::function<WindVector(const Site&)>;

inline MeanField holland_mean(HollandParams p) {
  p.validate();
  return [p](const Site& s) { return wind_components(p, s); };
}

inline MeanField zero_mean() {
  return [](const Site&) { return WindVector{}; };
}

}  // namespace ssbwind
