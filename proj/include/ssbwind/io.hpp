#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssbwind/domain.hpp"
#include "ssbwind/error.hpp"
#include "ssbwind/types.hpp"

namespace ssbwind {

using nlohmann::json;

namespace io {

inline constexpr std::string_view kObservationHeader = "lon,lat,source,u,v";

// Shortest representation that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view text, std::size_t line, const std::string& field) {
  text = trim(text);
  if (text.empty()) throw ParseError(line, field, "empty value");
  if (text.front() == '+') text.remove_prefix(1);
  double x = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), x);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ParseError(line, field, "not a number: '" + std::string(text) + "'");
  }
  if (!std::isfinite(x)) throw ParseError(line, field, "non-finite value");
  return x;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

}  // namespace io

// Everything about a dataset that is not a row of the observation CSV.
struct DatasetMeta {
  Bounds bounds;
  double center_lon = 0.0;
  double center_lat = 0.0;
  double heading_deg = 0.0;
};

inline json to_json(const DatasetMeta& m) {
  return json{{"bounds", {m.bounds.lon0, m.bounds.lat0, m.bounds.lon1, m.bounds.lat1}},
              {"storm_center", {m.center_lon, m.center_lat}},
              {"storm_heading_deg", m.heading_deg}};
}

inline DatasetMeta meta_from_json(const json& j) {
  try {
    DatasetMeta m;
    const auto& b = j.at("bounds");
    if (!b.is_array() || b.size() != 4) throw ConfigError("metadata: bounds must be [lon0, lat0, lon1, lat1]");
    m.bounds = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    const auto& c = j.at("storm_center");
    if (!c.is_array() || c.size() != 2) throw ConfigError("metadata: storm_center must be [lon, lat]");
    m.center_lon = c[0].get<double>();
    m.center_lat = c[1].get<double>();
    m.heading_deg = j.value("storm_heading_deg", 0.0);
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("metadata: ") + e.what());
  }
}

inline DatasetMeta meta_of(const Dataset& ds) {
  return {ds.domain_bounds, ds.storm_center.raw_lon, ds.storm_center.raw_lat,
          ds.storm_heading * 180.0 / std::numbers::pi};
}

// Parses observation CSV text. Leading '#' lines (provenance headers) are
// skipped; after that the header must be exactly `lon,lat,source,u,v`.
// Line numbers in errors are 1-based physical lines.
inline std::vector<Observation> parse_observations(std::string_view text) {
  std::vector<Observation> out;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = io::trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!header_seen) {
      if (line.empty() || line.front() == '#') {
        if (end == text.size()) break;
        continue;
      }
      if (line != io::kObservationHeader) {
        throw ParseError(line_no, "header", "expected '" + std::string(io::kObservationHeader) + "'");
      }
      header_seen = true;
      if (end == text.size()) break;
      continue;
    }
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto fields = io::split(line);
    if (fields.size() != 5) {
      throw ParseError(line_no, "row", "expected 5 fields, found " + std::to_string(fields.size()));
    }
    Observation obs;
    obs.site.raw_lon = io::parse_double(fields[0], line_no, "lon");
    obs.site.raw_lat = io::parse_double(fields[1], line_no, "lat");
    const auto tag = io::trim(fields[2]);
    if (tag == "satellite") {
      obs.source = Source::Satellite;
    } else if (tag == "buoy") {
      obs.source = Source::Buoy;
    } else {
      throw ParseError(line_no, "source", "unknown source tag '" + std::string(tag) + "'");
    }
    obs.wind.u = io::parse_double(fields[3], line_no, "u");
    obs.wind.v = io::parse_double(fields[4], line_no, "v");
    out.push_back(obs);
    if (end == text.size()) break;
  }
  if (!header_seen) throw ParseError(line_no == 0 ? 1 : line_no, "header", "missing header");
  return out;
}

inline std::string format_observations(const std::vector<Observation>& obs, std::string_view provenance = {}) {
  std::string out;
  if (!provenance.empty()) {
    out += "# ";
    out += provenance;
    out += '\n';
  }
  out += io::kObservationHeader;
  out += '\n';
  for (const auto& o : obs) {
    out += io::format_double(o.site.raw_lon) + ',' + io::format_double(o.site.raw_lat) + ',' +
           std::string(to_string(o.source)) + ',' + io::format_double(o.wind.u) + ',' + io::format_double(o.wind.v) +
           '\n';
  }
  return out;
}

// Builds a normalized Dataset from rows and metadata.
inline Dataset make_dataset(std::vector<Observation> obs, const DatasetMeta& meta) {
  Dataset ds;
  ds.observations = std::move(obs);
  ds.domain_bounds = meta.bounds;
  ds.storm_center.raw_lon = meta.center_lon;
  ds.storm_center.raw_lat = meta.center_lat;
  ds.storm_heading = meta.heading_deg * std::numbers::pi / 180.0;
  return normalize_domain(std::move(ds));
}

inline Dataset load_observations(const std::filesystem::path& csv, const DatasetMeta& meta) {
  return make_dataset(parse_observations(io::read_file(csv)), meta);
}

inline Dataset load_dataset(const std::filesystem::path& csv, const std::filesystem::path& meta_json) {
  return load_observations(csv, meta_from_json(io::read_json(meta_json)));
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& csv, const std::filesystem::path& meta_json,
                         std::string_view provenance = {}) {
  io::write_file(csv, format_observations(ds.observations, provenance));
  json meta = to_json(meta_of(ds));
  if (!provenance.empty()) meta["provenance"] = std::string(provenance);
  io::write_file(meta_json, meta.dump(2) + "\n");
}

}  // namespace ssbwind
