#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbev/common.hpp"
#include "fedbev/dataset.hpp"
#include "fedbev/drivecycle.hpp"
#include "fedbev/fed.hpp"
#include "fedbev/io.hpp"
#include "fedbev/nn.hpp"
#include "fedbev/powertrain.hpp"

namespace fedbev::config {

inline constexpr int kSchemaVersion = 1;
inline constexpr double kMinMass = 2000.0;
inline constexpr double kMaxMass = 2500.0;

/// Invalid run configuration; `field()` is a JSON path such as
/// "fleet.vehicles[3].mass".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }
  std::string kind() const override { return "ConfigError"; }

 private:
  std::string field_;
};

/// Terrain fetched from an elevation service at data-generation time. When
/// the service cannot be reached the fallback terrain is used instead.
struct ElevationSource {
  std::string endpoint;
  std::vector<std::pair<double, double>> route;  // (lat, lon)
  drivecycle::TerrainModel fallback;
};

struct VehicleSpec {
  double mass = kMinMass;
  drivecycle::DriverProfile driver;
  drivecycle::TerrainModel terrain;
  std::optional<ElevationSource> elevation;
  std::size_t trips = 3;
  std::size_t trip_duration = 530;  // s
};

struct FleetConfig {
  std::vector<VehicleSpec> vehicles;
  double soc0 = 0.9;
  bool allow_any_mass = false;
};

struct ReportConfig {
  std::size_t trace_vehicle = 0;
  std::optional<std::size_t> trace_local_model;  // default: the next client id
  std::size_t trace_duration = 600;               // s

  std::size_t local_model(std::size_t n) const {
    return trace_local_model ? *trace_local_model : (n > 1 ? (trace_vehicle + 1) % n : 0);
  }
};

struct RunConfig {
  std::uint64_t seed = 2024;
  std::filesystem::path output_dir = "runs/default";
  FleetConfig fleet;
  powertrain::VehicleParams vehicle;  // mass is taken per vehicle
  powertrain::ControllerParams controller;
  nn::ModelConfig model;
  nn::TrainSettings local_training;
  std::size_t rounds = 25;
  double participation = 1.0;
  nn::TrainSettings federation_training;
  std::size_t threads = 1;
  dataset::ScalingSpec scaling;
  double validation_fraction = 0.2;
  ReportConfig report;

  std::size_t clients() const { return fleet.vehicles.size(); }

  fed::FedConfig fed_config() const {
    fed::FedConfig f;
    f.rounds = rounds;
    f.participation = participation;
    f.local = federation_training;
    f.seed = derive_seed(seed, "federation");
    f.threads = threads;
    return f;
  }

  nn::ModelConfig model_config() const {
    auto m = model;
    m.seed = derive_seed(seed, "init");
    return m;
  }
};

// ---------------------------------------------------------------------------
// Default heterogeneous fleet

/// Vehicle i of n: masses evenly spaced over [2000, 2500] kg, driver and
/// terrain drawn from a per-vehicle seed, terrain families rotating.
inline VehicleSpec default_vehicle(std::size_t i, std::size_t n, std::uint64_t master) {
  VehicleSpec v;
  v.mass = n > 1 ? kMinMass + (kMaxMass - kMinMass) * static_cast<double>(i) / static_cast<double>(n - 1) : kMinMass;
  Rng rng(derive_seed(master, "fleet", i));
  static const std::vector<std::vector<double>> cruise_sets{
      {8.33, 11.11, 13.89}, {11.11, 13.89, 16.67}, {13.89, 16.67, 18.06}, {9.72, 15.28}, {12.5, 16.67}};
  v.driver.max_accel = rng.uniform(0.8, 1.5);
  v.driver.max_decel = rng.uniform(1.2, 3.0);
  v.driver.cruise_speeds = cruise_sets[i % cruise_sets.size()];
  v.driver.stop_fraction = rng.uniform(0.1, 0.3);
  auto hill = [&](double amp_lo, double amp_hi, double wl_lo, double wl_hi) {
    return drivecycle::HillComponent{rng.uniform(amp_lo, amp_hi), rng.uniform(wl_lo, wl_hi),
                                     rng.uniform(0.0, 2.0 * std::numbers::pi)};
  };
  switch (i % 4) {
    case 0:
      v.terrain = drivecycle::TerrainModel::synthetic_hills({hill(1.0, 3.0, 400.0, 800.0)});
      break;
    case 1:
      v.terrain = drivecycle::TerrainModel::synthetic_hills({hill(10.0, 16.0, 4000.0, 6000.0)});
      break;
    case 2:
      v.terrain = drivecycle::TerrainModel::synthetic_hills({hill(3.0, 8.0, 800.0, 1500.0), hill(0.5, 2.0, 150.0, 300.0)});
      break;
    default:
      v.terrain = drivecycle::TerrainModel::synthetic_hills({hill(8.0, 14.0, 2500.0, 3500.0)});
      break;
  }
  return v;
}

// ---------------------------------------------------------------------------
// JSON reading with field paths

namespace detail {

class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const nlohmann::json& json() const { return j_; }
  const std::string& path() const { return path_; }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void expect_object(const std::set<std::string>& allowed) const {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
    for (const auto& [key, value] : j_.items()) {
      if (!allowed.count(key)) throw ConfigError(child(key), "unknown field");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  Reader at(const std::string& key) const { return Reader(j_.at(key), child(key)); }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(child(key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(child(key), "must be finite");
    return x;
  }

  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(child(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::size_t size(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(unsigned_int(key, fallback));
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) throw ConfigError(child(key), "expected true or false");
    return j_.at(key).get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_string()) throw ConfigError(child(key), "expected a string");
    return j_.at(key).get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(child(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(child(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
};

/// Runs a sub-config validator and re-labels its failure with a field path.
template <class F>
void check(const std::string& path, F&& validate) {
  try {
    validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(path, e.what());
  }
}

inline drivecycle::DriverProfile read_driver(const Reader& r, drivecycle::DriverProfile d) {
  r.expect_object({"max_accel", "max_decel", "cruise_speeds", "stop_fraction"});
  d.max_accel = r.number("max_accel", d.max_accel);
  d.max_decel = r.number("max_decel", d.max_decel);
  d.cruise_speeds = r.numbers("cruise_speeds", d.cruise_speeds);
  d.stop_fraction = r.number("stop_fraction", d.stop_fraction);
  check(r.path(), [&] { d.validate(); });
  return d;
}

inline drivecycle::TerrainModel read_terrain(const Reader& r) {
  if (!r.json().is_object() || !r.has("kind")) throw ConfigError(r.child("kind"), "terrain kind is required");
  const auto kind = r.string("kind", "");
  drivecycle::TerrainModel t;
  if (kind == "flat") {
    r.expect_object({"kind"});
  } else if (kind == "constant_grade") {
    r.expect_object({"kind", "grade_percent", "grade_rad"});
    if (r.has("grade_percent") == r.has("grade_rad")) {
      throw ConfigError(r.path(), "give exactly one of grade_percent or grade_rad");
    }
    t = drivecycle::TerrainModel::constant(r.has("grade_rad") ? r.number("grade_rad", 0.0)
                                                              : drivecycle::percent_to_rad(r.number("grade_percent", 0.0)));
  } else if (kind == "synthetic_hills") {
    r.expect_object({"kind", "hills"});
    if (!r.has("hills") || !r.json().at("hills").is_array()) throw ConfigError(r.child("hills"), "expected an array");
    std::vector<drivecycle::HillComponent> hills;
    for (std::size_t i = 0; i < r.json().at("hills").size(); ++i) {
      Reader h(r.json().at("hills")[i], r.child("hills") + "[" + std::to_string(i) + "]");
      h.expect_object({"amplitude_m", "wavelength_m", "phase_rad"});
      hills.push_back({h.number("amplitude_m", 0.0), h.number("wavelength_m", 1.0), h.number("phase_rad", 0.0)});
    }
    t = drivecycle::TerrainModel::synthetic_hills(std::move(hills));
  } else if (kind == "table") {
    r.expect_object({"kind", "points"});
    const auto& pts = r.json().value("points", nlohmann::json::array());
    std::vector<std::pair<double, double>> table;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!pts[i].is_array() || pts[i].size() != 2 || !pts[i][0].is_number() || !pts[i][1].is_number()) {
        throw ConfigError(r.child("points") + "[" + std::to_string(i) + "]", "expected [distance_m, elevation_m]");
      }
      table.emplace_back(pts[i][0].get<double>(), pts[i][1].get<double>());
    }
    t = drivecycle::TerrainModel::from_table(std::move(table));
  } else {
    throw ConfigError(r.child("kind"), "unknown terrain kind '" + kind + "'");
  }
  check(r.path(), [&] { t.validate(); });
  return t;
}

inline ElevationSource read_elevation(const Reader& r, const drivecycle::TerrainModel& fallback) {
  r.expect_object({"endpoint", "route", "fallback"});
  ElevationSource e;
  e.endpoint = r.string("endpoint", "");
  if (e.endpoint.find("://") == std::string::npos) throw ConfigError(r.child("endpoint"), "expected an http:// URL");
  const auto& route = r.json().value("route", nlohmann::json::array());
  for (std::size_t i = 0; i < route.size(); ++i) {
    const auto p = r.child("route") + "[" + std::to_string(i) + "]";
    if (!route[i].is_array() || route[i].size() != 2 || !route[i][0].is_number() || !route[i][1].is_number()) {
      throw ConfigError(p, "expected [lat, lon]");
    }
    const double lat = route[i][0].get<double>(), lon = route[i][1].get<double>();
    if (std::abs(lat) > 90.0 || std::abs(lon) > 180.0) throw ConfigError(p, "coordinate out of range");
    e.route.emplace_back(lat, lon);
  }
  if (e.route.size() < 2) throw ConfigError(r.child("route"), "needs at least two points");
  e.fallback = r.has("fallback") ? read_terrain(r.at("fallback")) : fallback;
  return e;
}

inline VehicleSpec read_vehicle(const Reader& r, VehicleSpec v) {
  r.expect_object({"mass", "driver", "terrain", "elevation", "trips", "trip_duration_s"});
  v.mass = r.number("mass", v.mass);
  if (r.has("driver")) v.driver = read_driver(r.at("driver"), v.driver);
  if (r.has("terrain")) v.terrain = read_terrain(r.at("terrain"));
  if (r.has("elevation")) v.elevation = read_elevation(r.at("elevation"), v.terrain);
  v.trips = r.size("trips", v.trips);
  v.trip_duration = r.size("trip_duration_s", v.trip_duration);
  return v;
}

inline nn::TrainSettings read_training(const Reader& r, nn::TrainSettings s) {
  r.expect_object({"epochs", "batch_count", "learning_rate", "weight_decay", "optimizer"});
  s.hyper.epochs = r.size("epochs", s.hyper.epochs);
  s.hyper.batch_count = r.size("batch_count", s.hyper.batch_count);
  s.hyper.learning_rate = r.number("learning_rate", s.hyper.learning_rate);
  s.hyper.weight_decay = r.number("weight_decay", s.hyper.weight_decay);
  const auto opt = r.string("optimizer", nn::to_string(s.optimizer));
  check(r.child("optimizer"), [&] { s.optimizer = nn::optimizer_from_string(opt); });
  check(r.path(), [&] { s.hyper.validate(); });
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parsing and validation

/// Cross-field checks. Throws ConfigError naming the offending field.
inline void validate(const RunConfig& c) {
  const auto n = c.clients();
  if (n == 0) throw ConfigError("fleet.size", "the fleet needs at least one vehicle");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = c.fleet.vehicles[i];
    const auto p = "fleet.vehicles[" + std::to_string(i) + "]";
    if (!(v.mass > 0.0)) throw ConfigError(p + ".mass", "must be positive");
    if (!c.fleet.allow_any_mass && (v.mass < kMinMass || v.mass > kMaxMass)) {
      throw ConfigError(p + ".mass", "must lie in [2000, 2500] kg unless fleet.allow_any_mass is set");
    }
    if (v.trips == 0) throw ConfigError(p + ".trips", "must be positive (an empty dataset cannot be trained)");
    if (v.trip_duration < c.model.window) {
      throw ConfigError(p + ".trip_duration_s", "shorter than the model window; no samples would be produced");
    }
    detail::check(p + ".driver", [&] { v.driver.validate(); });
    detail::check(p + ".terrain", [&] { v.terrain.validate(); });
    detail::check(p + ".trip_duration_s", [&] {
      drivecycle::synthesize_speed_profile(v.driver, v.trip_duration, 0);
    });
  }
  if (!(c.fleet.soc0 > 0.0 && c.fleet.soc0 <= 1.0)) throw ConfigError("fleet.soc0", "must lie in (0, 1]");
  detail::check("physics.vehicle", [&] { c.vehicle.validate(); });
  detail::check("physics.controller", [&] { c.controller.validate(); });
  detail::check("model", [&] { c.model.validate(); });
  if (c.model.input_dim != dataset::kFeatureDim) throw ConfigError("model", "input_dim must be 2 (speed, grade)");
  detail::check("local_training", [&] { c.local_training.hyper.validate(); });
  detail::check("federation", [&] { c.federation_training.hyper.validate(); });
  if (!(c.participation > 0.0 && c.participation <= 1.0)) {
    throw ConfigError("federation.participation", "must lie in (0, 1]");
  }
  if (c.threads == 0) throw ConfigError("threads", "must be positive");
  detail::check("scaling", [&] { c.scaling.validate(); });
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction", "must lie in (0, 1)");
  }
  if (c.report.trace_vehicle >= n) throw ConfigError("report.trace_vehicle", "not a client id");
  if (c.report.trace_local_model && *c.report.trace_local_model >= n) {
    throw ConfigError("report.trace_local_model", "not a client id");
  }
  detail::check("report.trace_duration_s", [&] {
    drivecycle::synthesize_speed_profile(c.fleet.vehicles[c.report.trace_vehicle].driver, c.report.trace_duration, 0);
  });
  if (c.report.trace_duration < c.model.window) {
    throw ConfigError("report.trace_duration_s", "shorter than the model window");
  }
}

inline RunConfig parse(const nlohmann::json& root) {
  using detail::Reader;
  Reader r(root, "");
  r.expect_object({"schema_version", "seed", "output_dir", "fleet", "physics", "model", "local_training", "federation",
                   "scaling", "validation_fraction", "threads", "report"});
  if (!r.has("schema_version")) throw ConfigError("schema_version", "required");
  if (r.unsigned_int("schema_version", 0) != kSchemaVersion) {
    throw ConfigError("schema_version", "unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  RunConfig c;
  c.seed = r.unsigned_int("seed", c.seed);
  c.output_dir = r.string("output_dir", c.output_dir.string());

  if (r.has("model")) {
    auto m = r.at("model");
    m.expect_object({"window", "hidden", "dropout_rate"});
    c.model.window = m.size("window", c.model.window);
    c.model.dropout_rate = m.number("dropout_rate", c.model.dropout_rate);
    if (m.has("hidden")) {
      const auto& h = m.json().at("hidden");
      if (!h.is_array()) throw ConfigError(m.child("hidden"), "expected an array of layer widths");
      c.model.hidden.clear();
      for (std::size_t i = 0; i < h.size(); ++i) {
        if (!h[i].is_number_integer() || h[i].get<std::int64_t>() <= 0) {
          throw ConfigError(m.child("hidden") + "[" + std::to_string(i) + "]", "expected a positive integer");
        }
        c.model.hidden.push_back(h[i].get<std::size_t>());
      }
    }
  }
  c.local_training.dropout_rate = c.model.dropout_rate;
  c.federation_training.dropout_rate = c.model.dropout_rate;
  c.local_training.hyper.epochs = 100;
  if (r.has("local_training")) c.local_training = detail::read_training(r.at("local_training"), c.local_training);

  c.federation_training.hyper.epochs = 10;
  if (r.has("federation")) {
    auto f = r.at("federation");
    f.expect_object({"rounds", "participation", "epochs", "batch_count", "learning_rate", "weight_decay", "optimizer"});
    c.rounds = f.size("rounds", c.rounds);
    c.participation = f.number("participation", c.participation);
    nlohmann::json local = f.json();
    local.erase("rounds");
    local.erase("participation");
    c.federation_training = detail::read_training(Reader(local, f.path()), c.federation_training);
  }

  if (r.has("physics")) {
    auto p = r.at("physics");
    p.expect_object({"vehicle", "controller"});
    if (p.has("vehicle")) {
      auto v = p.at("vehicle");
      v.expect_object({"battery_capacity_wh", "drag_coeff", "frontal_area_m2", "rolling_coeff", "drive_efficiency",
                       "regen_efficiency", "max_regen_power_w", "aux_power_w", "max_traction_force_n",
                       "air_density", "gravity"});
      auto& d = c.vehicle;
      d.battery_capacity = v.number("battery_capacity_wh", d.battery_capacity);
      d.drag_coeff = v.number("drag_coeff", d.drag_coeff);
      d.frontal_area = v.number("frontal_area_m2", d.frontal_area);
      d.rolling_coeff = v.number("rolling_coeff", d.rolling_coeff);
      d.drive_efficiency = v.number("drive_efficiency", d.drive_efficiency);
      d.regen_efficiency = v.number("regen_efficiency", d.regen_efficiency);
      d.max_regen_power = v.number("max_regen_power_w", d.max_regen_power);
      d.aux_power = v.number("aux_power_w", d.aux_power);
      d.max_traction_force = v.number("max_traction_force_n", d.max_traction_force);
      d.air_density = v.number("air_density", d.air_density);
      d.gravity = v.number("gravity", d.gravity);
    }
    if (p.has("controller")) {
      auto k = p.at("controller");
      k.expect_object({"kp", "ki", "v_nominal", "integrator_limit"});
      c.controller.kp = k.number("kp", c.controller.kp);
      c.controller.ki = k.number("ki", c.controller.ki);
      c.controller.v_nominal = k.number("v_nominal", c.controller.v_nominal);
      c.controller.integrator_limit = k.number("integrator_limit", c.controller.integrator_limit);
    }
  }

  if (r.has("scaling")) {
    auto s = r.at("scaling");
    s.expect_object({"speed_scale", "grade_scale", "label_scale"});
    c.scaling.speed_scale = s.number("speed_scale", c.scaling.speed_scale);
    c.scaling.grade_scale = s.number("grade_scale", c.scaling.grade_scale);
    c.scaling.label_scale = s.number("label_scale", c.scaling.label_scale);
  }
  c.validation_fraction = r.number("validation_fraction", c.validation_fraction);
  c.threads = r.size("threads", c.threads);

  std::size_t n = 10;
  std::size_t trips = 3, duration = 530;
  const nlohmann::json empty_fleet = nlohmann::json::object();
  Reader f = r.has("fleet") ? r.at("fleet") : Reader(empty_fleet, "fleet");
  f.expect_object({"size", "trips_per_vehicle", "trip_duration_s", "soc0", "allow_any_mass", "vehicles"});
  trips = f.size("trips_per_vehicle", trips);
  duration = f.size("trip_duration_s", duration);
  c.fleet.soc0 = f.number("soc0", c.fleet.soc0);
  c.fleet.allow_any_mass = f.boolean("allow_any_mass", false);
  const nlohmann::json* listed = nullptr;
  if (f.has("vehicles")) {
    listed = &f.json().at("vehicles");
    if (!listed->is_array()) throw ConfigError(f.child("vehicles"), "expected an array");
    n = listed->size();
    if (f.has("size") && f.size("size", n) != n) {
      throw ConfigError(f.child("size"), "does not match the number of listed vehicles");
    }
  } else {
    n = f.size("size", n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto v = default_vehicle(i, n, c.seed);
    v.trips = trips;
    v.trip_duration = duration;
    if (listed) v = detail::read_vehicle(Reader((*listed)[i], f.child("vehicles") + "[" + std::to_string(i) + "]"), v);
    c.fleet.vehicles.push_back(std::move(v));
  }

  if (r.has("report")) {
    auto rep = r.at("report");
    rep.expect_object({"trace_vehicle", "trace_local_model", "trace_duration_s"});
    c.report.trace_vehicle = rep.size("trace_vehicle", c.report.trace_vehicle);
    if (rep.has("trace_local_model")) c.report.trace_local_model = rep.size("trace_local_model", 0);
    c.report.trace_duration = rep.size("trace_duration_s", c.report.trace_duration);
  }
  validate(c);
  return c;
}

inline RunConfig parse_text(const std::string& text, const std::string& source = "<config>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source, std::string("config is not valid JSON: ") + e.what());
  }
  return parse(j);
}

inline RunConfig load(const std::filesystem::path& path) { return parse_text(io::read_text(path), path.string()); }

// ---------------------------------------------------------------------------
// Effective configuration, fully expanded (written next to the corpus)

inline nlohmann::json terrain_to_json(const drivecycle::TerrainModel& t) {
  using drivecycle::TerrainKind;
  switch (t.kind) {
    case TerrainKind::flat:
      return {{"kind", "flat"}};
    case TerrainKind::constant_grade:
      return {{"kind", "constant_grade"}, {"grade_rad", t.grade_const}};
    case TerrainKind::synthetic_hills: {
      nlohmann::json hills = nlohmann::json::array();
      for (const auto& h : t.hills) {
        hills.push_back({{"amplitude_m", h.amplitude}, {"wavelength_m", h.wavelength}, {"phase_rad", h.phase}});
      }
      return {{"kind", "synthetic_hills"}, {"hills", hills}};
    }
    case TerrainKind::table: {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& [d, e] : t.table) pts.push_back({d, e});
      return {{"kind", "table"}, {"points", pts}};
    }
  }
  return {};
}

inline nlohmann::json training_to_json(const nn::TrainSettings& s) {
  return {{"epochs", s.hyper.epochs},
          {"batch_count", s.hyper.batch_count},
          {"learning_rate", s.hyper.learning_rate},
          {"weight_decay", s.hyper.weight_decay},
          {"optimizer", nn::to_string(s.optimizer)}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json vehicles = nlohmann::json::array();
  for (const auto& v : c.fleet.vehicles) {
    nlohmann::json j = {{"mass", v.mass},
                        {"driver",
                         {{"max_accel", v.driver.max_accel},
                          {"max_decel", v.driver.max_decel},
                          {"cruise_speeds", v.driver.cruise_speeds},
                          {"stop_fraction", v.driver.stop_fraction}}},
                        {"terrain", terrain_to_json(v.terrain)},
                        {"trips", v.trips},
                        {"trip_duration_s", v.trip_duration}};
    if (v.elevation) {
      nlohmann::json route = nlohmann::json::array();
      for (const auto& [lat, lon] : v.elevation->route) route.push_back({lat, lon});
      j["elevation"] = {
          {"endpoint", v.elevation->endpoint}, {"route", route}, {"fallback", terrain_to_json(v.elevation->fallback)}};
    }
    vehicles.push_back(std::move(j));
  }
  auto fed = training_to_json(c.federation_training);
  fed["rounds"] = c.rounds;
  fed["participation"] = c.participation;
  nlohmann::json report = {{"trace_vehicle", c.report.trace_vehicle}, {"trace_duration_s", c.report.trace_duration}};
  if (c.report.trace_local_model) report["trace_local_model"] = *c.report.trace_local_model;
  const auto& d = c.vehicle;
  return {{"schema_version", kSchemaVersion},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"fleet",
           {{"soc0", c.fleet.soc0}, {"allow_any_mass", c.fleet.allow_any_mass}, {"vehicles", vehicles}}},
          {"physics",
           {{"vehicle",
             {{"battery_capacity_wh", d.battery_capacity},
              {"drag_coeff", d.drag_coeff},
              {"frontal_area_m2", d.frontal_area},
              {"rolling_coeff", d.rolling_coeff},
              {"drive_efficiency", d.drive_efficiency},
              {"regen_efficiency", d.regen_efficiency},
              {"max_regen_power_w", d.max_regen_power},
              {"aux_power_w", d.aux_power},
              {"max_traction_force_n", d.max_traction_force},
              {"air_density", d.air_density},
              {"gravity", d.gravity}}},
            {"controller",
             {{"kp", c.controller.kp},
              {"ki", c.controller.ki},
              {"v_nominal", c.controller.v_nominal},
              {"integrator_limit", c.controller.integrator_limit}}}}},
          {"model", {{"window", c.model.window}, {"hidden", c.model.hidden}, {"dropout_rate", c.model.dropout_rate}}},
          {"local_training", training_to_json(c.local_training)},
          {"federation", fed},
          {"scaling", dataset::scaling_to_json(c.scaling)},
          {"validation_fraction", c.validation_fraction},
          {"threads", c.threads},
          {"report", report}};
}

}  // namespace fedbev::config
