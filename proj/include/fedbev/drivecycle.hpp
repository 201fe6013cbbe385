#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "fedbev/common.hpp"
#include "fedbev/io.hpp"

namespace fedbev::drivecycle {

/// Largest road grade any terrain may produce, in radians.
inline constexpr double kMaxGrade = 0.15;
/// Legal speed ceiling for synthesized cruise speeds (130 km/h).
inline constexpr double kMaxCruiseSpeed = 36.1;
/// Shortest trip the synthesizer accepts, in seconds.
inline constexpr std::size_t kMinDuration = 60;

inline double percent_to_rad(double percent) { return std::atan(percent / 100.0); }

struct DriveCycle {
  double dt = 1.0;
  std::vector<double> speed_ref;  // m/s
  std::vector<double> grade;      // rad
  std::string trip_id;
  std::string vehicle_id;

  std::size_t size() const { return speed_ref.size(); }

  void validate() const {
    require(dt == 1.0, "drive cycle: dt must be 1 s");
    require(!speed_ref.empty(), "drive cycle: empty");
    require(speed_ref.size() == grade.size(), "drive cycle: speed and grade lengths differ");
    for (std::size_t k = 0; k < speed_ref.size(); ++k) {
      require(std::isfinite(speed_ref[k]) && speed_ref[k] >= 0.0,
              "drive cycle: negative or non-finite speed at step " + std::to_string(k));
      require(std::isfinite(grade[k]) && std::abs(grade[k]) <= kMaxGrade,
              "drive cycle: grade out of bounds at step " + std::to_string(k));
    }
    require(speed_ref.front() == 0.0 && speed_ref.back() == 0.0,
            "drive cycle: must start and end at rest");
  }
};

struct DriverProfile {
  double max_accel = 1.5;  // m/s^2
  double max_decel = 2.0;  // m/s^2
  std::vector<double> cruise_speeds{8.33, 13.89};
  double stop_fraction = 0.2;

  void validate() const {
    require(max_accel >= 0.5 && max_accel <= 2.5, "driver: max_accel must lie in [0.5, 2.5] m/s^2");
    require(max_decel >= 0.5 && max_decel <= 3.5, "driver: max_decel must lie in [0.5, 3.5] m/s^2");
    require(!cruise_speeds.empty(), "driver: cruise_speeds must not be empty");
    for (double v : cruise_speeds) {
      require(std::isfinite(v) && v >= 0.0 && v <= kMaxCruiseSpeed,
              "driver: cruise speeds must lie in [0, 36.1] m/s");
    }
    require(stop_fraction >= 0.0 && stop_fraction <= 1.0, "driver: stop_fraction must lie in [0, 1]");
  }
};

enum class TerrainKind { flat, constant_grade, synthetic_hills, table };

struct HillComponent {
  double amplitude = 0.0;   // m
  double wavelength = 1.0;  // m
  double phase = 0.0;       // rad
};

struct TerrainModel {
  TerrainKind kind = TerrainKind::flat;
  double grade_const = 0.0;
  std::vector<HillComponent> hills;
  /// (distance m, elevation m), strictly increasing in distance.
  std::vector<std::pair<double, double>> table;

  static TerrainModel flat() { return {}; }
  static TerrainModel constant(double grade_rad) {
    TerrainModel t;
    t.kind = TerrainKind::constant_grade;
    t.grade_const = grade_rad;
    return t;
  }
  static TerrainModel synthetic_hills(std::vector<HillComponent> hills) {
    TerrainModel t;
    t.kind = TerrainKind::synthetic_hills;
    t.hills = std::move(hills);
    return t;
  }
  static TerrainModel from_table(std::vector<std::pair<double, double>> table) {
    TerrainModel t;
    t.kind = TerrainKind::table;
    t.table = std::move(table);
    return t;
  }

  void validate() const {
    const double max_slope = std::tan(kMaxGrade);
    switch (kind) {
      case TerrainKind::flat:
        break;
      case TerrainKind::constant_grade:
        require(std::isfinite(grade_const) && std::abs(grade_const) <= kMaxGrade,
                "terrain: |grade_const| must not exceed 0.15 rad");
        break;
      case TerrainKind::synthetic_hills: {
        // The summed slope is bounded by the sum of the component slope amplitudes.
        double bound = 0.0;
        for (const auto& h : hills) {
          require(std::isfinite(h.amplitude) && std::isfinite(h.phase) && h.wavelength > 0.0,
                  "terrain: hill components need finite amplitude/phase and positive wavelength");
          bound += std::abs(h.amplitude) * 2.0 * std::numbers::pi / h.wavelength;
        }
        require(bound <= max_slope, "terrain: hill slopes can exceed 0.15 rad");
        break;
      }
      case TerrainKind::table:
        require(!table.empty(), "terrain: elevation table is empty");
        for (std::size_t i = 1; i < table.size(); ++i) {
          require(table[i].first > table[i - 1].first,
                  "terrain: table distances must be strictly increasing");
          const double slope = (table[i].second - table[i - 1].second) /
                               (table[i].first - table[i - 1].first);
          require(std::abs(slope) <= max_slope, "terrain: table slope exceeds 0.15 rad");
        }
        break;
    }
  }
};

inline const char* to_string(TerrainKind k) {
  switch (k) {
    case TerrainKind::flat: return "flat";
    case TerrainKind::constant_grade: return "constant_grade";
    case TerrainKind::synthetic_hills: return "synthetic_hills";
    case TerrainKind::table: return "table";
  }
  return "?";
}

inline TerrainKind terrain_kind_from_string(const std::string& s) {
  if (s == "flat") return TerrainKind::flat;
  if (s == "constant_grade") return TerrainKind::constant_grade;
  if (s == "synthetic_hills") return TerrainKind::synthetic_hills;
  if (s == "table") return TerrainKind::table;
  throw InvalidArgument("unknown terrain kind '" + s + "'");
}

/// Road grade (rad) at a distance travelled along the route.
inline double grade_at(const TerrainModel& terrain, double distance) {
  require(distance >= 0.0, "grade_at: distance must be non-negative");
  switch (terrain.kind) {
    case TerrainKind::flat:
      return 0.0;
    case TerrainKind::constant_grade:
      return terrain.grade_const;
    case TerrainKind::synthetic_hills: {
      double slope = 0.0;
      for (const auto& h : terrain.hills) {
        const double k = 2.0 * std::numbers::pi / h.wavelength;
        slope += h.amplitude * k * std::cos(k * distance + h.phase);
      }
      return std::atan(slope);
    }
    case TerrainKind::table: {
      const auto& tab = terrain.table;
      if (tab.size() < 2) return 0.0;
      // Outside the table the slope of the nearest end segment applies.
      auto it = std::upper_bound(tab.begin(), tab.end(), distance,
                                 [](double d, const auto& p) { return d < p.first; });
      std::size_t hi = static_cast<std::size_t>(it - tab.begin());
      hi = std::clamp<std::size_t>(hi, 1, tab.size() - 1);
      const auto& a = tab[hi - 1];
      const auto& b = tab[hi];
      return std::atan((b.second - a.second) / (b.first - a.first));
    }
  }
  return 0.0;
}

namespace detail {

inline std::size_t ramp_steps(double speed, double rate) {
  return static_cast<std::size_t>(std::ceil(speed / rate - 1e-12));
}

}  // namespace detail

/// Piecewise-trapezoidal urban speed profile: repeated (accelerate at
/// max_accel to a cruise speed, hold, decelerate at max_decel to rest, dwell)
/// segments. Index 0 and the last index are at rest.
inline std::vector<double> synthesize_speed_profile(const DriverProfile& profile,
                                                    std::size_t duration, std::uint64_t seed) {
  profile.validate();
  require(duration >= kMinDuration, "speed profile: duration must be at least 60 s");
  const double a = profile.max_accel;
  const double d = profile.max_decel;
  const double vmax = *std::max_element(profile.cruise_speeds.begin(), profile.cruise_speeds.end());
  if (vmax > 0.0) {
    const std::size_t min_cycle = detail::ramp_steps(vmax, a) + detail::ramp_steps(vmax, d) + 2;
    require(duration >= min_cycle,
            "speed profile: duration too short for one accelerate-stop cycle (need " +
                std::to_string(min_cycle) + " s)");
  }

  Rng rng(seed);
  std::vector<double> v;
  v.reserve(duration);
  v.push_back(0.0);

  auto remaining = [&] { return duration - v.size(); };

  while (remaining() > 0) {
    double cruise = profile.cruise_speeds[rng.index(profile.cruise_speeds.size())];
    std::size_t hold = static_cast<std::size_t>(rng.integer(5, 60));
    if (cruise <= 0.0 || profile.stop_fraction >= 1.0) {
      const std::size_t dwell = std::min<std::size_t>(static_cast<std::size_t>(rng.integer(5, 30)), remaining());
      v.insert(v.end(), dwell, 0.0);
      continue;
    }
    std::size_t up = detail::ramp_steps(cruise, a);
    std::size_t down = detail::ramp_steps(cruise, d);
    if (up + down + hold > remaining()) {
      if (up + down <= remaining()) {
        hold = remaining() - up - down;
      } else {
        // Lower the peak until a full ramp-up/ramp-down fits.
        hold = 0;
        const double fit = static_cast<double>(remaining()) / (1.0 / a + 1.0 / d);
        cruise = std::floor(fit * 0.9 * 100.0) / 100.0;
        if (cruise < 1.0) {
          v.insert(v.end(), remaining(), 0.0);
          break;
        }
        up = detail::ramp_steps(cruise, a);
        down = detail::ramp_steps(cruise, d);
        if (up + down > remaining()) {
          v.insert(v.end(), remaining(), 0.0);
          break;
        }
      }
    }
    double speed = 0.0;
    for (std::size_t k = 0; k < up; ++k) {
      speed = std::min(cruise, speed + a);
      v.push_back(speed);
    }
    v.insert(v.end(), hold, cruise);
    for (std::size_t k = 0; k < down; ++k) {
      speed = std::max(0.0, speed - d);
      v.push_back(speed);
    }
    if (remaining() == 0) break;
    const double moving = static_cast<double>(up + hold + down);
    const double ratio = profile.stop_fraction / (1.0 - profile.stop_fraction);
    std::size_t dwell = static_cast<std::size_t>(std::llround(ratio * moving * rng.uniform(0.5, 1.5)));
    dwell = std::clamp<std::size_t>(dwell, 1, remaining());
    v.insert(v.end(), dwell, 0.0);
  }
  v.back() = 0.0;
  return v;
}

/// Cumulative distance before each step: d[0] = 0, d[k] = sum_{i<k} v[i] dt.
inline std::vector<double> cumulative_distance(const std::vector<double>& speed, double dt = 1.0) {
  std::vector<double> dist(speed.size(), 0.0);
  for (std::size_t k = 1; k < speed.size(); ++k) dist[k] = dist[k - 1] + speed[k - 1] * dt;
  return dist;
}

inline std::vector<double> grade_profile(const TerrainModel& terrain, const std::vector<double>& speed) {
  terrain.validate();
  const auto dist = cumulative_distance(speed);
  std::vector<double> grade(speed.size());
  for (std::size_t k = 0; k < speed.size(); ++k) grade[k] = grade_at(terrain, dist[k]);
  return grade;
}

inline DriveCycle build_cycle(const DriverProfile& profile, const TerrainModel& terrain,
                              std::size_t duration, std::uint64_t seed,
                              std::string trip_id = {}, std::string vehicle_id = {}) {
  terrain.validate();
  DriveCycle cycle;
  cycle.speed_ref = synthesize_speed_profile(profile, duration, seed);
  cycle.grade = grade_profile(terrain, cycle.speed_ref);
  cycle.trip_id = std::move(trip_id);
  cycle.vehicle_id = std::move(vehicle_id);
  cycle.validate();
  return cycle;
}

/// Parses a 1 Hz cycle CSV with header `t,speed_mps` or `t,speed_kmh`.
/// `source` names the input in error messages.
inline DriveCycle parse_cycle_csv(const std::string& text, const TerrainModel& terrain,
                                  const std::string& source = "<cycle>") {
  const auto rows = io::lines(text);
  if (rows.empty()) throw FormatError(source, "empty cycle file");
  const std::string header{trim(rows[0])};
  double to_mps = 1.0;
  if (header == "t,speed_mps") {
    to_mps = 1.0;
  } else if (header == "t,speed_kmh") {
    to_mps = 1.0 / 3.6;
  } else {
    throw FormatError(source, "row 1: expected header 't,speed_mps' or 't,speed_kmh'");
  }
  DriveCycle cycle;
  double prev_t = 0.0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (trim(rows[r]).empty()) continue;
    const std::string row_no = "row " + std::to_string(r + 1);
    const auto fields = split_fields(rows[r]);
    double t = 0.0, speed = 0.0;
    if (fields.size() != 2 || !parse_double(fields[0], t) || !parse_double(fields[1], speed) ||
        !std::isfinite(t) || !std::isfinite(speed)) {
      throw FormatError(source, row_no + ": malformed row '" + rows[r] + "'");
    }
    if (speed < 0.0) throw FormatError(source, row_no + ": negative speed");
    if (!cycle.speed_ref.empty()) {
      if (!(t > prev_t)) throw FormatError(source, row_no + ": time is not increasing");
      if (std::abs(t - prev_t - 1.0) > 1e-9) throw FormatError(source, row_no + ": rows must be 1 s apart");
    }
    prev_t = t;
    cycle.speed_ref.push_back(speed * to_mps);
  }
  if (cycle.speed_ref.empty()) throw FormatError(source, "no data rows");
  if (cycle.speed_ref.front() != 0.0 || cycle.speed_ref.back() != 0.0) {
    throw FormatError(source, "cycle must start and end at rest");
  }
  cycle.grade = grade_profile(terrain, cycle.speed_ref);
  cycle.trip_id = std::filesystem::path(source).stem().string();
  cycle.validate();
  return cycle;
}

inline DriveCycle import_cycle(const std::filesystem::path& path, const TerrainModel& terrain) {
  return parse_cycle_csv(io::read_text(path), terrain, path.string());
}

inline std::string cycle_to_csv(const DriveCycle& cycle) {
  std::string out = "t,speed_mps\n";
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    out += std::to_string(k) + "," + format_double(cycle.speed_ref[k]) + "\n";
  }
  return out;
}

/// FNV-1a over the bit patterns of the speed and grade sequences.
inline std::uint64_t cycle_hash(const DriveCycle& cycle) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](double x) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (double x : cycle.speed_ref) mix(x);
  for (double x : cycle.grade) mix(x);
  return h;
}

}  // namespace fedbev::drivecycle
