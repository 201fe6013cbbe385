#pragma once

#include <string>
#include <vector>

#include "fedbev/common.hpp"
#include "fedbev/io.hpp"

namespace fedbev::dataset {

/// Per-second feature/label matrix of one trip. Columns in order: time,
/// speed, grade, and the per-step energy label (always last).
struct TripRecord {
  std::string trip_id;
  std::string vehicle_id;
  std::vector<double> time;    // s
  std::vector<double> speed;   // m/s
  std::vector<double> grade;   // rad
  std::vector<double> energy;  // Wh per step
  bool depleted = false;

  std::size_t size() const { return time.size(); }

  void validate() const {
    const std::size_t n = time.size();
    require(speed.size() == n && grade.size() == n && energy.size() == n,
            "trip record '" + trip_id + "': columns have different lengths");
  }

  bool operator==(const TripRecord&) const = default;
};

inline constexpr const char* kTripCsvHeader = "t,v_mps,grade_rad,e_step_wh";

inline std::string trip_to_csv(const TripRecord& trip) {
  trip.validate();
  std::string out = kTripCsvHeader;
  out += '\n';
  for (std::size_t k = 0; k < trip.size(); ++k) {
    out += format_double(trip.time[k]);
    out += ',';
    out += format_double(trip.speed[k]);
    out += ',';
    out += format_double(trip.grade[k]);
    out += ',';
    out += format_double(trip.energy[k]);
    out += '\n';
  }
  return out;
}

inline TripRecord trip_from_csv(const std::string& text, const std::string& source) {
  const auto rows = io::lines(text);
  if (rows.empty() || trim(rows[0]) != kTripCsvHeader) {
    throw FormatError(source, std::string("expected header '") + kTripCsvHeader + "'");
  }
  TripRecord trip;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (trim(rows[r]).empty()) continue;
    const auto f = split_fields(rows[r]);
    double t, v, g, e;
    if (f.size() != 4 || !parse_double(f[0], t) || !parse_double(f[1], v) ||
        !parse_double(f[2], g) || !parse_double(f[3], e)) {
      throw FormatError(source, "row " + std::to_string(r + 1) + ": malformed");
    }
    trip.time.push_back(t);
    trip.speed.push_back(v);
    trip.grade.push_back(g);
    trip.energy.push_back(e);
  }
  return trip;
}

}  // namespace fedbev::dataset
