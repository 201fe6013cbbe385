#pragma once

#include <filesystem>
#include <functional>
#include <future>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbev/config.hpp"
#include "fedbev/dataset.hpp"
#include "fedbev/drivecycle.hpp"
#include "fedbev/eval.hpp"
#include "fedbev/fed.hpp"
#include "fedbev/io.hpp"
#include "fedbev/nn.hpp"
#include "fedbev/powertrain.hpp"
#if FEDBEV_WITH_HTTP
#include "fedbev/elevation.hpp"
#endif

namespace fedbev::pipeline {

namespace fs = std::filesystem;

using Logger = std::function<void(const std::string&)>;

/// File layout of one run below its output directory.
struct RunPaths {
  fs::path root;

  fs::path effective_config() const { return root / "config.json"; }
  fs::path data() const { return root / "data"; }
  fs::path fleet_manifest() const { return data() / "fleet.json"; }
  fs::path vehicle_dir(std::size_t i) const { return data() / ("vehicle_" + std::to_string(i)); }
  fs::path vehicle_manifest(std::size_t i) const { return vehicle_dir(i) / "manifest.json"; }
  fs::path elevation_cache() const { return root / "elevation_cache"; }
  fs::path local() const { return root / "local"; }
  fs::path local_checkpoint(std::size_t i) const { return local() / ("client_" + std::to_string(i) + ".ckpt"); }
  fs::path local_loss(std::size_t i) const { return local() / ("client_" + std::to_string(i) + "_loss.csv"); }
  fs::path fed() const { return root / "fed"; }
  fs::path fed_checkpoint() const { return fed() / "model.ckpt"; }
  fs::path round_log() const { return fed() / "rounds.jsonl"; }
  fs::path report() const { return root / "report"; }
};

inline RunPaths paths(const config::RunConfig& cfg) { return {cfg.output_dir}; }

inline constexpr const char* kFleetFormat = "fedbev-fleet";

/// Fingerprint of every input that shapes the corpus. Training commands
/// refuse a corpus generated from a different configuration.
inline std::string corpus_key(const config::RunConfig& cfg) {
  const auto j = config::to_json(cfg);
  const nlohmann::json inputs = {
      {"seed", j["seed"]}, {"fleet", j["fleet"]}, {"physics", j["physics"]}, {"scaling", j["scaling"]}};
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(inputs.dump())));
  return buf;
}

namespace detail {

template <class F>
void for_each_parallel(std::size_t n, std::size_t threads, F&& body) {
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  for (std::size_t start = 0; start < n; start += threads) {
    std::vector<std::future<void>> tasks;
    for (std::size_t i = start; i < std::min(n, start + threads); ++i) {
      tasks.push_back(std::async(std::launch::async, [&body, i] { body(i); }));
    }
    for (auto& t : tasks) t.get();
  }
}

inline void log(const Logger& logger, const std::string& msg) {
  if (logger) logger(msg);
}

struct ResolvedTerrain {
  drivecycle::TerrainModel terrain;
  std::string source;  // "config", "elevation", "fallback"
};

inline ResolvedTerrain resolve_terrain(const config::VehicleSpec& v, [[maybe_unused]] const RunPaths& p,
                                       [[maybe_unused]] const Logger& logger) {
  if (!v.elevation) return {v.terrain, "config"};
#if FEDBEV_WITH_HTTP
  try {
    std::vector<elevation::GeoPoint> route;
    for (const auto& [lat, lon] : v.elevation->route) route.push_back({lat, lon});
    elevation::ElevationClient client(v.elevation->endpoint, p.elevation_cache());
    const auto elev = client.fetch(route);
    return {elevation::terrain_from_elevations(route, elev), "elevation"};
  } catch (const elevation::ElevationError& e) {
    log(logger, std::string("elevation lookup failed, using fallback terrain: ") + e.what());
  }
#else
  log(logger, "built without the HTTP elevation client, using fallback terrain");
#endif
  return {v.elevation->fallback, "fallback"};
}

inline powertrain::VehicleParams vehicle_params(const config::RunConfig& cfg, std::size_t i) {
  auto vp = cfg.vehicle;
  vp.mass = cfg.fleet.vehicles[i].mass;
  return vp;
}

inline std::string vehicle_id(std::size_t i) { return "vehicle_" + std::to_string(i); }

/// Scales every window of a vehicle, re-labelling an out-of-range label as a
/// configuration problem.
inline std::vector<dataset::WindowedSample> scaled_windows(const dataset::LocalDataset& ds, std::size_t m,
                                                           const dataset::ScalingSpec& scaling) {
  try {
    return dataset::scale_all(dataset::build_windows(ds, m), scaling);
  } catch (const InvalidArgument& e) {
    throw config::ConfigError("scaling.label_scale", ds.vehicle_id + ": " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data

struct VehicleSummary {
  std::size_t id = 0;
  std::size_t trips = 0;
  std::size_t samples = 0;  // all windows
  std::size_t train_samples = 0;
  std::size_t validation_samples = 0;
  std::string terrain_source;
};

inline std::vector<VehicleSummary> cmd_gen_data(const config::RunConfig& cfg, const Logger& logger = {}) {
  config::validate(cfg);
  const auto p = paths(cfg);
  fs::remove_all(p.data());
  const std::size_t n = cfg.clients();
  std::vector<VehicleSummary> summary(n);
  std::vector<detail::ResolvedTerrain> terrains(n);

  detail::for_each_parallel(n, cfg.threads, [&](std::size_t i) {
    const auto& v = cfg.fleet.vehicles[i];
    terrains[i] = detail::resolve_terrain(v, p, logger);
    const auto vp = detail::vehicle_params(cfg, i);
    const auto corpus_seed = derive_seed(cfg.seed, "corpus", i);
    dataset::LocalDataset ds;
    ds.vehicle_id = detail::vehicle_id(i);
    ds.scaling = cfg.scaling;
    for (std::size_t j = 0; j < v.trips; ++j) {
      char trip_id[48];
      std::snprintf(trip_id, sizeof trip_id, "vehicle_%zu_trip_%03zu", i, j);
      const auto cycle = drivecycle::build_cycle(v.driver, terrains[i].terrain, v.trip_duration,
                                                 derive_seed(corpus_seed, "trip", j), trip_id, ds.vehicle_id);
      ds.trips.push_back(powertrain::simulate_trip(cycle, vp, cfg.controller, cfg.fleet.soc0).record);
    }
    const auto windows = detail::scaled_windows(ds, cfg.model.window, cfg.scaling);
    dataset::save(ds, p.vehicle_dir(i));
    auto& s = summary[i];
    s.id = i;
    s.trips = ds.trips.size();
    s.samples = windows.size();
    s.train_samples = static_cast<std::size_t>(
        std::ceil(static_cast<double>(s.samples) * (1.0 - cfg.validation_fraction) - 1e-9));
    s.validation_samples = s.samples - s.train_samples;
    s.terrain_source = terrains[i].source;
  });

  nlohmann::json vehicles = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = summary[i];
    vehicles.push_back({{"id", i},
                        {"vehicle_id", detail::vehicle_id(i)},
                        {"manifest", detail::vehicle_id(i) + "/manifest.json"},
                        {"mass", cfg.fleet.vehicles[i].mass},
                        {"trips", s.trips},
                        {"samples", s.samples},
                        {"train_samples", s.train_samples},
                        {"validation_samples", s.validation_samples},
                        {"terrain_source", s.terrain_source},
                        {"terrain", config::terrain_to_json(terrains[i].terrain)}});
  }
  const nlohmann::json fleet = {{"format", kFleetFormat},
                                {"version", 1},
                                {"corpus_key", corpus_key(cfg)},
                                {"window", cfg.model.window},
                                {"vehicles", vehicles}};
  io::write_text(p.fleet_manifest(), fleet.dump(2) + "\n");
  io::write_text(p.effective_config(), config::to_json(cfg).dump(2) + "\n");
  for (const auto& s : summary) {
    detail::log(logger, "vehicle " + std::to_string(s.id) + ": " + std::to_string(s.trips) + " trips, " +
                            std::to_string(s.samples) + " windows");
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Corpus loading

struct Corpus {
  std::vector<fed::ClientHandle> clients;
  std::vector<drivecycle::TerrainModel> terrains;  // as used at generation time
};

inline nlohmann::json read_fleet_manifest(const config::RunConfig& cfg) {
  const auto p = paths(cfg);
  const auto file = p.fleet_manifest();
  if (!fs::exists(file)) {
    throw IoError("missing corpus: expected fleet manifest " + file.string() + " (run gen-data first)");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(file));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string(), std::string("corrupt fleet manifest: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kFleetFormat || j.value("version", 0) != 1) {
    throw FormatError(file.string(), "not a fleet manifest");
  }
  if (j.value("corpus_key", "") != corpus_key(cfg)) {
    throw InvalidArgument("corpus at " + p.data().string() +
                          " was generated from a different fleet, physics, scaling or seed; rerun gen-data");
  }
  return j;
}

inline Corpus load_corpus(const config::RunConfig& cfg) {
  const auto p = paths(cfg);
  const auto fleet = read_fleet_manifest(cfg);
  const std::size_t n = cfg.clients();
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    const auto manifest = p.vehicle_manifest(i);
    if (!fs::exists(manifest)) {
      throw IoError("missing corpus: expected manifest " + manifest.string() + " (run gen-data first)");
    }
    const auto ds = dataset::load(manifest);
    const auto windows = detail::scaled_windows(ds, cfg.model.window, cfg.scaling);
    dataset::Split parts;
    try {
      parts = dataset::split(windows, cfg.validation_fraction, derive_seed(cfg.seed, "split", i));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(ds.vehicle_id + ": " + e.what());
    }
    c.clients.push_back({i, std::move(parts.train), std::move(parts.validation)});
    try {
      c.terrains.push_back(config::detail::read_terrain(
          config::detail::Reader(fleet.at("vehicles").at(i).at("terrain"), "terrain")));
    } catch (const std::exception& e) {
      throw FormatError(p.fleet_manifest().string(), "vehicle " + std::to_string(i) + ": " + e.what());
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// train-local

inline std::vector<nn::TrainResult> cmd_train_local(const config::RunConfig& cfg, const Logger& logger = {}) {
  config::validate(cfg);
  const auto p = paths(cfg);
  const auto corpus = load_corpus(cfg);
  const auto init = nn::init_params(cfg.model_config());
  const std::size_t n = corpus.clients.size();
  std::vector<nn::TrainResult> results(n);
  detail::for_each_parallel(n, cfg.threads, [&](std::size_t i) {
    results[i] = nn::train_local(init, corpus.clients[i].train, cfg.local_training, derive_seed(cfg.seed, "baseline", i));
  });
  for (std::size_t i = 0; i < n; ++i) {
    nn::save_checkpoint(results[i].params, p.local_checkpoint(i));
    io::write_text(p.local_loss(i), nn::loss_trace_csv(results[i].loss_trace));
    const double last = results[i].loss_trace.empty() ? 0.0 : results[i].loss_trace.back();
    detail::log(logger, "client " + std::to_string(i) + ": final train MAE " +
                            format_double(dataset::unscale_label(last, cfg.scaling)) + " Wh");
  }
  return results;
}

// ---------------------------------------------------------------------------
// train-fed

inline fed::FedResult cmd_train_fed(const config::RunConfig& cfg, const Logger& logger = {}) {
  config::validate(cfg);
  const auto p = paths(cfg);
  const auto corpus = load_corpus(cfg);
  fs::remove(p.round_log());
  fed::FedHooks hooks;
  hooks.on_round = [&](const fed::RoundReport& r) {
    fed::append_round(p.round_log(), r);
    double mean = 0.0;
    for (double v : r.validation_loss_wh) mean += v;
    mean /= static_cast<double>(r.validation_loss_wh.size());
    detail::log(logger, "round " + std::to_string(r.round) + "/" + std::to_string(cfg.rounds) + ": train " +
                            format_double(r.global_train_loss_wh) + " Wh, mean validation " + format_double(mean) +
                            " Wh");
  };
  auto result = fed::run_federated(corpus.clients, cfg.model_config(), cfg.fed_config(), cfg.scaling, hooks);
  nn::save_checkpoint(result.final_params, p.fed_checkpoint());
  if (cfg.rounds == 0) io::write_text(p.round_log(), "");
  const auto trace = eval::convergence_trace(result.rounds, nn::to_string(cfg.federation_training.optimizer));
  io::write_text(p.fed() / "convergence.csv", eval::convergence_csv(trace));
  io::write_text(p.fed() / "train_loss.csv", eval::train_loss_csv(trace));
  return result;
}

// ---------------------------------------------------------------------------
// report

struct ReportResult {
  eval::LossMatrix matrix;
  eval::ConvergenceTrace convergence;
  eval::NormalizedTrace normalized;
  eval::PredictionTrace trace;
  std::vector<double> fed_validation_wh;  // final federated model, per client
  double trace_mae_fed = 0.0;
  double trace_mae_local = 0.0;
  std::size_t trace_local_model = 0;

  double fed_mean_validation() const {
    double acc = 0.0;
    for (double v : fed_validation_wh) acc += v;
    return acc / static_cast<double>(fed_validation_wh.size());
  }
};

/// Trip that no client trained on: the trace vehicle's driver and terrain
/// with a fresh seed.
inline dataset::TripRecord held_out_trip(const config::RunConfig& cfg, const drivecycle::TerrainModel& terrain) {
  const std::size_t v = cfg.report.trace_vehicle;
  const auto cycle = drivecycle::build_cycle(cfg.fleet.vehicles[v].driver, terrain, cfg.report.trace_duration,
                                             derive_seed(cfg.seed, "held_out", v), "held_out",
                                             detail::vehicle_id(v));
  return powertrain::simulate_trip(cycle, detail::vehicle_params(cfg, v), cfg.controller, cfg.fleet.soc0).record;
}

inline ReportResult cmd_report(const config::RunConfig& cfg, const Logger& logger = {}) {
  config::validate(cfg);
  const auto p = paths(cfg);
  const std::size_t n = cfg.clients();
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < n; ++i) {
    if (!fs::exists(p.local_checkpoint(i))) missing.push_back(p.local_checkpoint(i).string());
  }
  if (!fs::exists(p.fed_checkpoint())) missing.push_back(p.fed_checkpoint().string());
  if (!fs::exists(p.round_log())) missing.push_back(p.round_log().string());
  if (!missing.empty()) {
    std::string msg = "missing checkpoints (run train-local and train-fed first):";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }
  const auto corpus = load_corpus(cfg);
  std::vector<nn::ModelParameters> locals;
  for (std::size_t i = 0; i < n; ++i) locals.push_back(nn::load_checkpoint(p.local_checkpoint(i)));
  const auto global = nn::load_checkpoint(p.fed_checkpoint());

  ReportResult r;
  std::vector<std::vector<dataset::WindowedSample>> validation;
  for (const auto& c : corpus.clients) validation.push_back(c.validation);
  r.matrix = eval::loss_matrix(locals, validation, cfg.scaling, cfg.threads);
  for (const auto& v : validation) r.fed_validation_wh.push_back(eval::evaluate(global, v, cfg.scaling));

  const auto rounds = fed::read_round_log(p.round_log());
  r.convergence = eval::convergence_trace(rounds, nn::to_string(cfg.federation_training.optimizer));
  r.normalized = eval::normalized_validation_trace(r.convergence);

  r.trace_local_model = cfg.report.local_model(n);
  const auto trip = held_out_trip(cfg, corpus.terrains[cfg.report.trace_vehicle]);
  r.trace = eval::prediction_trace(global, locals[r.trace_local_model], trip, cfg.model.window, cfg.scaling);
  r.trace_mae_fed = eval::trace_mae(r.trace.truth_wh, r.trace.fed_wh);
  r.trace_mae_local = eval::trace_mae(r.trace.truth_wh, r.trace.local_wh);

  fs::remove_all(p.report());
  eval::export_matrix(r.matrix, p.report());
  eval::export_convergence(r.convergence, p.report());
  eval::export_normalized(r.normalized, p.report());
  eval::export_trace(r.trace, p.report());
  detail::log(logger, "local matrix: diagonal " + format_double(r.matrix.mean_diagonal()) + " Wh" +
                          (n > 1 ? ", off-diagonal " + format_double(r.matrix.mean_off_diagonal()) + " Wh" : ""));
  detail::log(logger, "federated mean validation " + format_double(r.fed_mean_validation()) + " Wh");
  return r;
}

}  // namespace fedbev::pipeline
