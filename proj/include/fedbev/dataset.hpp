#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedbev/common.hpp"
#include "fedbev/io.hpp"
#include "fedbev/trip_record.hpp"

namespace fedbev::dataset {

/// Model inputs per time step: speed and grade. The time column is stored
/// with each trip but never fed to the model.
inline constexpr std::size_t kFeatureDim = 2;
inline constexpr std::size_t kDefaultWindow = 30;

struct ScalingSpec {
  double speed_scale = 36.1;  // m/s
  double grade_scale = 0.15;  // rad
  double label_scale = 250.0; // Wh

  void validate() const {
    require(speed_scale > 0.0 && grade_scale > 0.0 && label_scale > 0.0,
            "scaling: all scales must be positive");
  }
  bool operator==(const ScalingSpec&) const = default;
};

struct SampleOrigin {
  std::string trip_id;
  std::size_t end = 0;  // 0-based index of the last step in the window
  bool operator==(const SampleOrigin&) const = default;
};

/// One model input: `window` consecutive (speed, grade) rows, row-major, and
/// the energy summed over the same steps.
struct WindowedSample {
  std::size_t window = 0;
  std::vector<double> features;
  double label = 0.0;
  SampleOrigin origin;

  double speed(std::size_t t) const { return features[t * kFeatureDim]; }
  double grade(std::size_t t) const { return features[t * kFeatureDim + 1]; }
  bool operator==(const WindowedSample&) const = default;
};

/// All trips of one vehicle (the concatenated history D^i).
struct LocalDataset {
  std::string vehicle_id;
  std::vector<TripRecord> trips;
  ScalingSpec scaling;

  /// Number of windows of length m: sum over trips of max(0, l - m + 1).
  std::size_t sample_count(std::size_t m) const {
    std::size_t n = 0;
    for (const auto& t : trips) {
      if (t.size() >= m) n += t.size() - m + 1;
    }
    return n;
  }

  bool operator==(const LocalDataset&) const = default;
};

/// Sliding windows within each trip. Trips shorter than m contribute nothing
/// and are reported through `warnings` when given.
inline std::vector<WindowedSample> build_windows(const LocalDataset& ds, std::size_t m,
                                                 std::vector<std::string>* warnings = nullptr) {
  require(m >= 1, "build_windows: window length must be at least 1");
  std::vector<WindowedSample> out;
  out.reserve(ds.sample_count(m));
  for (const auto& trip : ds.trips) {
    trip.validate();
    if (trip.size() < m) {
      if (warnings) {
        warnings->push_back("trip '" + trip.trip_id + "' (length " + std::to_string(trip.size()) +
                            ") is shorter than the window " + std::to_string(m));
      }
      continue;
    }
    for (std::size_t end = m - 1; end < trip.size(); ++end) {
      WindowedSample s;
      s.window = m;
      s.features.resize(m * kFeatureDim);
      double label = 0.0;
      const std::size_t begin = end + 1 - m;
      for (std::size_t t = 0; t < m; ++t) {
        s.features[t * kFeatureDim] = trip.speed[begin + t];
        s.features[t * kFeatureDim + 1] = trip.grade[begin + t];
        label += trip.energy[begin + t];
      }
      s.label = label;
      s.origin = {trip.trip_id, end};
      out.push_back(std::move(s));
    }
  }
  return out;
}

inline WindowedSample scale(const WindowedSample& sample, const ScalingSpec& spec) {
  spec.validate();
  WindowedSample out = sample;
  for (std::size_t t = 0; t < sample.window; ++t) {
    out.features[t * kFeatureDim] /= spec.speed_scale;
    out.features[t * kFeatureDim + 1] /= spec.grade_scale;
  }
  out.label = sample.label / spec.label_scale;
  if (!(std::abs(out.label) < 1.0)) {
    throw InvalidArgument("scaled label " + format_double(out.label) + " of window ending at " +
                          sample.origin.trip_id + ":" + std::to_string(sample.origin.end) +
                          " is outside (-1, 1); raise label_scale above " +
                          format_double(std::abs(sample.label)) + " Wh");
  }
  return out;
}

inline double unscale_label(double y, const ScalingSpec& spec) { return y * spec.label_scale; }

inline std::vector<WindowedSample> scale_all(const std::vector<WindowedSample>& samples,
                                             const ScalingSpec& spec) {
  std::vector<WindowedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(scale(s, spec));
  return out;
}

struct Split {
  std::vector<WindowedSample> train;
  std::vector<WindowedSample> validation;
};

/// Seeded shuffle, then the first ceil(n (1 - f)) samples train.
inline Split split(const std::vector<WindowedSample>& samples, double val_fraction, std::uint64_t seed) {
  require(val_fraction > 0.0 && val_fraction < 1.0, "split: val_fraction must lie in (0, 1)");
  require(samples.size() >= 2, "split: need at least 2 samples");
  const std::size_t n = samples.size();
  const auto n_train = static_cast<std::size_t>(
      std::ceil(static_cast<double>(n) * (1.0 - val_fraction) - 1e-9));
  require(n_train > 0 && n_train < n, "split: one side would be empty");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  Split out;
  out.train.reserve(n_train);
  out.validation.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? out.train : out.validation).push_back(samples[order[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: a JSON manifest per vehicle referencing one CSV per trip.

inline constexpr const char* kDatasetFormat = "fedbev-dataset";
inline constexpr int kDatasetVersion = 1;

inline nlohmann::json scaling_to_json(const ScalingSpec& s) {
  return {{"speed_scale", s.speed_scale}, {"grade_scale", s.grade_scale}, {"label_scale", s.label_scale}};
}

inline ScalingSpec scaling_from_json(const nlohmann::json& j) {
  ScalingSpec s;
  s.speed_scale = j.value("speed_scale", s.speed_scale);
  s.grade_scale = j.value("grade_scale", s.grade_scale);
  s.label_scale = j.value("label_scale", s.label_scale);
  s.validate();
  return s;
}

/// Writes `dir/manifest.json` and `dir/trip_NNN.csv`; returns the manifest path.
inline std::filesystem::path save(const LocalDataset& ds, const std::filesystem::path& dir) {
  nlohmann::json trips = nlohmann::json::array();
  for (std::size_t j = 0; j < ds.trips.size(); ++j) {
    const auto& trip = ds.trips[j];
    char name[32];
    std::snprintf(name, sizeof(name), "trip_%03zu.csv", j);
    io::write_text(dir / name, trip_to_csv(trip));
    trips.push_back({{"trip_id", trip.trip_id},
                     {"trip_csv", name},
                     {"length", trip.size()},
                     {"depleted", trip.depleted}});
  }
  nlohmann::json manifest = {{"format", kDatasetFormat},
                             {"version", kDatasetVersion},
                             {"vehicle_id", ds.vehicle_id},
                             {"trips", trips},
                             {"scaling", scaling_to_json(ds.scaling)}};
  const auto path = dir / "manifest.json";
  io::write_text(path, manifest.dump(2) + "\n");
  return path;
}

/// Loads a dataset from its manifest file (or from a directory containing one).
inline LocalDataset load(const std::filesystem::path& path) {
  const auto manifest_path = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  const std::string where = manifest_path.string();
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where, std::string("corrupt manifest: ") + e.what());
  }
  try {
    if (!m.is_object() || m.value("format", "") != kDatasetFormat) {
      throw FormatError(where, "not a dataset manifest (bad format tag)");
    }
    if (m.value("version", -1) != kDatasetVersion) {
      throw FormatError(where, "unsupported dataset version " + m.value("version", nlohmann::json()).dump());
    }
    LocalDataset ds;
    ds.vehicle_id = m.at("vehicle_id").get<std::string>();
    ds.scaling = scaling_from_json(m.at("scaling"));
    const auto dir = manifest_path.parent_path();
    for (const auto& t : m.at("trips")) {
      const auto csv = dir / t.at("trip_csv").get<std::string>();
      TripRecord trip = trip_from_csv(io::read_text(csv), csv.string());
      trip.trip_id = t.at("trip_id").get<std::string>();
      trip.vehicle_id = ds.vehicle_id;
      trip.depleted = t.value("depleted", false);
      if (trip.size() != t.at("length").get<std::size_t>()) {
        throw FormatError(csv.string(), "row count does not match manifest length");
      }
      ds.trips.push_back(std::move(trip));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where, std::string("invalid manifest: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(where, e.what());
  }
}

}  // namespace fedbev::dataset
