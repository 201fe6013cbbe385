#pragma once

// Optional HTTP elevation provider (open-elevation style API). Build with
// FEDBEV_WITH_HTTP=1; link Threads.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "fedbev/common.hpp"
#include "fedbev/drivecycle.hpp"
#include "fedbev/io.hpp"

namespace fedbev::elevation {

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

class ElevationError : public Error {
 public:
  using Error::Error;
  std::string kind() const override { return "ElevationError"; }
};

inline constexpr std::size_t kMaxPointsPerRequest = 100;

/// Endpoint such as "http://localhost:8080/api/v1/lookup".
struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;  // starts with '/'

  static Endpoint parse(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ElevationError("elevation endpoint '" + url + "' lacks a scheme");
    const auto slash = url.find('/', scheme + 3);
    Endpoint e;
    e.base = url.substr(0, slash);
    e.path = slash == std::string::npos ? "/" : url.substr(slash);
    return e;
  }
};

/// "lat,lon|lat,lon|..." with coordinates rounded to 5 decimals.
inline std::string locations_param(std::span<const GeoPoint> points) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < points.size(); ++i) {
    require(std::isfinite(points[i].lat) && std::abs(points[i].lat) <= 90.0 && std::isfinite(points[i].lon) &&
                std::abs(points[i].lon) <= 180.0,
            "elevation: point " + std::to_string(i) + " is not a valid coordinate");
    std::snprintf(buf, sizeof buf, "%.5f,%.5f", points[i].lat, points[i].lon);
    if (i) out += '|';
    out += buf;
  }
  return out;
}

class ElevationClient {
 public:
  ElevationClient(std::string endpoint, std::optional<std::filesystem::path> cache_dir = std::nullopt,
                  int timeout_s = 10)
      : endpoint_(Endpoint::parse(endpoint)), cache_dir_(std::move(cache_dir)), timeout_s_(timeout_s) {}

  /// One elevation (m) per point, in input order. Requests are chunked to at
  /// most 100 points; chunks already on disk are not re-requested.
  std::vector<double> fetch(std::span<const GeoPoint> points) {
    std::vector<double> out;
    out.reserve(points.size());
    for (std::size_t start = 0; start < points.size(); start += kMaxPointsPerRequest) {
      const auto chunk = points.subspan(start, std::min(kMaxPointsPerRequest, points.size() - start));
      const auto key = locations_param(chunk);
      auto values = read_cache(key);
      if (!values) {
        values = request(key, chunk.size());
        write_cache(key, *values);
      }
      out.insert(out.end(), values->begin(), values->end());
    }
    return out;
  }

  std::size_t requests_issued() const { return requests_; }

 private:
  std::filesystem::path cache_file(const std::string& key) const {
    char name[32];
    std::snprintf(name, sizeof name, "%016llx.json", static_cast<unsigned long long>(fnv1a64(key)));
    return *cache_dir_ / name;
  }

  std::optional<std::vector<double>> read_cache(const std::string& key) const {
    if (!cache_dir_) return std::nullopt;
    const auto file = cache_file(key);
    std::lock_guard lock(cache_mutex());
    if (!std::filesystem::exists(file)) return std::nullopt;
    try {
      const auto j = nlohmann::json::parse(io::read_text(file));
      // Hash collisions fall through to a fresh request.
      if (j.at("locations").get<std::string>() != key) return std::nullopt;
      return j.at("elevations").get<std::vector<double>>();
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  void write_cache(const std::string& key, const std::vector<double>& values) const {
    if (!cache_dir_) return;
    std::lock_guard lock(cache_mutex());
    io::write_text(cache_file(key), nlohmann::json{{"locations", key}, {"elevations", values}}.dump() + "\n");
  }

  std::vector<double> request(const std::string& key, std::size_t expected) {
    httplib::Client client(endpoint_.base);
    client.set_connection_timeout(timeout_s_, 0);
    client.set_read_timeout(timeout_s_, 0);
    ++requests_;
    const auto res = client.Get(endpoint_.path, httplib::Params{{"locations", key}}, httplib::Headers{});
    if (!res) {
      throw ElevationError("elevation request to " + endpoint_.base + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw ElevationError("elevation request to " + endpoint_.base + " returned HTTP " + std::to_string(res->status));
    }
    try {
      const auto j = nlohmann::json::parse(res->body);
      std::vector<double> values;
      for (const auto& r : j.at("results")) values.push_back(r.at("elevation").get<double>());
      if (values.size() != expected) {
        throw ElevationError("elevation response has " + std::to_string(values.size()) + " results for " +
                             std::to_string(expected) + " points");
      }
      return values;
    } catch (const nlohmann::json::exception& e) {
      throw ElevationError(std::string("malformed elevation response: ") + e.what());
    }
  }

  static std::mutex& cache_mutex() {
    static std::mutex m;
    return m;
  }

  Endpoint endpoint_;
  std::optional<std::filesystem::path> cache_dir_;
  int timeout_s_;
  std::size_t requests_ = 0;
};

inline std::vector<double> fetch_elevations(const std::string& endpoint, std::span<const GeoPoint> points,
                                            std::optional<std::filesystem::path> cache_dir = std::nullopt) {
  if (points.empty()) return {};
  ElevationClient client(endpoint, std::move(cache_dir));
  return client.fetch(points);
}

/// Great-circle distance in metres.
inline double haversine(const GeoPoint& a, const GeoPoint& b) {
  constexpr double r = 6371000.0;
  const double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad, dlon = (b.lon - a.lon) * rad;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * r * std::asin(std::min(1.0, std::sqrt(h)));
}

/// Elevation table along a route. Coincident points are dropped and segment
/// slopes steeper than the grade bound are flattened to it.
inline drivecycle::TerrainModel terrain_from_elevations(std::span<const GeoPoint> route,
                                                        std::span<const double> elevations) {
  require(route.size() == elevations.size() && !route.empty(), "terrain_from_elevations: size mismatch or empty");
  const double max_slope = std::tan(drivecycle::kMaxGrade) * (1.0 - 1e-9);
  std::vector<std::pair<double, double>> table{{0.0, elevations[0]}};
  double dist = 0.0;
  for (std::size_t i = 1; i < route.size(); ++i) {
    const double step = haversine(route[i - 1], route[i]);
    if (step <= 1e-6) continue;
    dist += step;
    const double prev = table.back().second;
    const double rise = std::clamp(elevations[i] - prev, -max_slope * step, max_slope * step);
    table.emplace_back(dist, prev + rise);
  }
  if (table.size() == 1) return drivecycle::TerrainModel::flat();
  auto t = drivecycle::TerrainModel::from_table(std::move(table));
  t.validate();
  return t;
}

}  // namespace fedbev::elevation
