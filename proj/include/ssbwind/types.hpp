#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "ssbwind/error.hpp"

namespace ssbwind {

// A spatial location. (s1, s2) are the unit-square coordinates used by every
// kernel; (raw_lon, raw_lat) are degrees and drive the Holland geometry.
struct Site {
  double s1 = 0.0;
  double s2 = 0.0;
  double raw_lon = 0.0;
  double raw_lat = 0.0;

  bool operator==(const Site&) const = default;
};

// West/east (u) and north/south (v) wind components, m/s.
struct WindVector {
  double u = 0.0;
  double v = 0.0;

  double speed() const { return std::hypot(u, v); }
  double component(int c) const { return c == 0 ? u : v; }

  bool operator==(const WindVector&) const = default;
};

enum class Source { Satellite = 0, Buoy = 1 };

inline constexpr int kNumSources = 2;
inline constexpr int kNumComponents = 2;

inline std::string_view to_string(Source s) { return s == Source::Satellite ? "satellite" : "buoy"; }

inline Source parse_source(std::string_view text) {
  if (text == "satellite") return Source::Satellite;
  if (text == "buoy") return Source::Buoy;
  throw ConfigError("unknown source tag '" + std::string(text) + "'");
}

inline std::string_view component_name(int c) { return c == 0 ? "u" : "v"; }

struct Observation {
  Site site;
  WindVector wind;
  Source source = Source::Satellite;

  bool operator==(const Observation&) const = default;
};

// Raw-coordinate bounding box, degrees.
struct Bounds {
  double lon0 = 0.0;
  double lat0 = 0.0;
  double lon1 = 1.0;
  double lat1 = 1.0;

  double width() const { return lon1 - lon0; }
  double height() const { return lat1 - lat0; }
  bool contains(double lon, double lat) const {
    return lon >= lon0 && lon <= lon1 && lat >= lat0 && lat <= lat1;
  }

  bool operator==(const Bounds&) const = default;
};

struct Dataset {
  std::vector<Observation> observations;
  Bounds domain_bounds;
  Site storm_center;
  double storm_heading = 0.0;  // radians clockwise from north

  bool operator==(const Dataset&) const = default;
};

}  // namespace ssbwind
