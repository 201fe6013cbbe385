// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   acceptance [--config <desk.json>] [--work <dir>] [--only 1,2,...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedbev/config.hpp"
#include "fedbev/drivecycle.hpp"
#include "fedbev/fed.hpp"
#include "fedbev/nn.hpp"
#include "fedbev/pipeline.hpp"
#include "fedbev/powertrain.hpp"
#include "reference_lstm.hpp"

using namespace fedbev;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

struct Context {
  fs::path desk_config;
  fs::path work;
  std::optional<config::RunConfig> desk;
  std::optional<fed::FedResult> adam_run;

  const config::RunConfig& desk_cfg() {
    if (!desk) {
      auto j = nlohmann::json::parse(io::read_text(desk_config));
      j["output_dir"] = (work / "desk").string();
      desk = config::parse(j);
    }
    return *desk;
  }

  void ensure_corpus() {
    if (!fs::exists(pipeline::paths(desk_cfg()).fleet_manifest())) pipeline::cmd_gen_data(desk_cfg());
  }

  const fed::FedResult& adam() {
    if (!adam_run) {
      ensure_corpus();
      adam_run = pipeline::cmd_train_fed(desk_cfg(), [](const std::string& l) { std::fprintf(stderr, "  adam %s\n", l.c_str()); });
    }
    return *adam_run;
  }
};

// 1. Gradient oracle against central differences of an independent loop LSTM.
Outcome gradient_oracle(Context&) {
  const auto t0 = Clock::now();
  Rng rng(20240101);
  std::size_t checked = 0, failures = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    nn::ModelConfig mc;
    mc.window = static_cast<std::size_t>(rng.integer(2, 6));
    mc.input_dim = 2;
    mc.hidden.clear();
    const auto layers = rng.integer(1, 2);
    for (std::int64_t l = 0; l < layers; ++l) mc.hidden.push_back(static_cast<std::size_t>(rng.integer(3, 8)));
    mc.dropout_rate = 0.0;
    mc.seed = rng.next();
    auto p = nn::init_params(mc);
    for (auto& w : p.values) w += rng.uniform(-0.3, 0.3);

    std::vector<dataset::WindowedSample> batch(3);
    for (auto& s : batch) {
      s.window = mc.window;
      s.features.resize(mc.window * 2);
      for (std::size_t t = 0; t < mc.window; ++t) {
        s.features[2 * t] = rng.uniform(0.0, 1.0);
        s.features[2 * t + 1] = rng.uniform(-1.0, 1.0);
      }
      s.label = rng.uniform(-0.9, 0.9);
    }
    const std::vector<std::size_t> idx{0, 1, 2};
    Rng unused(0);
    const auto analytic = nn::batch_gradient(p, batch, idx, 0.0, unused).gradient;

    const fedbev::testing::RefShape shape{mc.window, mc.input_dim, mc.hidden};
    const auto numeric = fedbev::testing::central_differences(
        [&](const std::vector<double>& w) {
          long double loss = 0.0L;
          for (const auto& s : batch)
            loss += std::abs(fedbev::testing::reference_forward<long double>(shape, w, s.features) - s.label);
          return loss / static_cast<long double>(batch.size());
        },
        p.values, 1e-5);
    const auto r = fedbev::testing::compare_gradients(analytic, numeric, 1e-4, 1e-8);
    checked += r.checked;
    failures += r.failures;
    worst = std::max(worst, r.worst);
  }
  const double elapsed = seconds_since(t0);
  return {failures == 0 && checked > 0 && elapsed < 30.0,
          std::to_string(checked) + " coordinates, " + std::to_string(failures) + " over 1e-4, worst rel " +
              fmt(worst) + ", " + fmt(elapsed, 3) + " s"};
}

// 2. Every window label equals the sum of its per-step energies.
Outcome window_labels(Context& ctx) {
  ctx.ensure_corpus();
  const auto t0 = Clock::now();
  const auto& cfg = ctx.desk_cfg();
  const std::size_t m = cfg.model.window;
  std::size_t windows = 0, bad = 0;
  for (std::size_t i = 0; i < cfg.clients(); ++i) {
    const auto ds = dataset::load(pipeline::paths(cfg).vehicle_manifest(i));
    std::map<std::string, const dataset::TripRecord*> by_id;
    for (const auto& t : ds.trips) by_id[t.trip_id] = &t;
    for (const auto& s : dataset::build_windows(ds, m)) {
      const auto& e = by_id.at(s.origin.trip_id)->energy;
      long double ref = 0.0L;
      for (std::size_t k = s.origin.end + 1 - m; k <= s.origin.end; ++k) ref += e[k];
      const double r = static_cast<double>(ref);
      const double tol = 1e-12 * std::max(std::abs(r), 1e-300);
      bad += !(std::abs(s.label - r) <= tol || (r == 0.0 && s.label == 0.0));
      ++windows;
    }
  }
  const double elapsed = seconds_since(t0);
  return {bad == 0 && windows > 0 && elapsed < 5.0,
          std::to_string(windows) + " windows, " + std::to_string(bad) + " mismatches, " + fmt(elapsed, 3) + " s"};
}

const std::vector<double> kGrades{0.0, 2.5, 5.0, 7.5, 10.0};

std::vector<powertrain::TripSimulation> ftp_runs() {
  const auto fixture = fs::path(FEDBEV_DATA_DIR) / "ftp75_like.csv";
  powertrain::VehicleParams vp;
  vp.mass = 2000.0;
  std::vector<powertrain::TripSimulation> out;
  for (double g : kGrades) {
    const auto cycle = drivecycle::import_cycle(fixture, drivecycle::TerrainModel::constant(drivecycle::percent_to_rad(g)));
    out.push_back(powertrain::simulate_trip(cycle, vp, powertrain::ControllerParams{}, 0.9));
  }
  return out;
}

// 3. Trip energy grows strictly with grade; 10% costs at least 50% more than flat.
Outcome slope_monotonicity(Context&) {
  const auto t0 = Clock::now();
  const auto runs = ftp_runs();
  std::string detail;
  bool increasing = true;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    detail += (i ? ", " : "") + fmt(kGrades[i], 2) + "%: " + fmt(runs[i].total_energy(), 6) + " Wh";
    if (i && !(runs[i].total_energy() > runs[i - 1].total_energy())) increasing = false;
    if (runs[i].depleted) increasing = false;
  }
  const double ratio = runs.back().total_energy() / runs.front().total_energy();
  const double elapsed = seconds_since(t0);
  return {increasing && ratio >= 1.5 && elapsed < 10.0,
          detail + "; ratio " + fmt(ratio) + ", " + fmt(elapsed, 3) + " s"};
}

// 4. RMS tracking error below 0.5 m/s at every tested grade.
Outcome speed_tracking(Context&) {
  const auto fixture = fs::path(FEDBEV_DATA_DIR) / "ftp75_like.csv";
  powertrain::VehicleParams vp;
  vp.mass = 2000.0;
  double worst = 0.0;
  std::string detail;
  for (double g : kGrades) {
    const auto cycle = drivecycle::import_cycle(fixture, drivecycle::TerrainModel::constant(drivecycle::percent_to_rad(g)));
    const auto sim = powertrain::simulate_trip(cycle, vp, powertrain::ControllerParams{}, 0.9);
    const double rms = powertrain::track_quality(cycle, sim.record);
    worst = std::max(worst, rms);
    detail += (detail.empty() ? "" : ", ") + fmt(g, 2) + "%: " + fmt(rms) + " m/s";
  }
  return {worst < 0.5, detail};
}

// 5. Desk-scale federation: mean validation MAE halves and every client improves.
Outcome federated_convergence(Context& ctx) {
  const auto t0 = Clock::now();
  const auto& run = ctx.adam();
  const double elapsed = seconds_since(t0);
  const auto& cfg = ctx.desk_cfg();
  if (run.rounds.size() != 25) return {false, "expected 25 rounds, got " + std::to_string(run.rounds.size())};
  const auto& first = run.rounds.front().validation_loss_wh;
  const auto& last = run.rounds.back().validation_loss_wh;
  double m1 = 0.0, m25 = 0.0;
  std::size_t improved = 0;
  for (std::size_t c = 0; c < first.size(); ++c) {
    m1 += first[c];
    m25 += last[c];
    improved += last[c] < first[c];
  }
  m1 /= static_cast<double>(first.size());
  m25 /= static_cast<double>(last.size());
  std::size_t windows = 0;
  for (const auto& v : nlohmann::json::parse(io::read_text(pipeline::paths(cfg).fleet_manifest()))["vehicles"]) {
    windows += v["samples"].get<std::size_t>();
  }
  const bool shape_ok = cfg.clients() == 10 && cfg.model.hidden == std::vector<std::size_t>{50, 50} &&
                        cfg.federation_training.hyper.epochs == 10 && cfg.participation == 1.0 &&
                        cfg.federation_training.optimizer == nn::OptimizerKind::adam;
  return {shape_ok && m25 < 0.5 * m1 && improved == first.size() && elapsed < 1200.0,
          "mean validation MAE round 1 " + fmt(m1) + " Wh, round 25 " + fmt(m25) + " Wh (ratio " + fmt(m25 / m1) +
              "), " + std::to_string(improved) + "/" + std::to_string(first.size()) + " clients improved, " +
              std::to_string(windows / cfg.clients()) + " windows/client, " + fmt(elapsed, 4) + " s"};
}

// 6. Local models generalize worse across clients than the federated model.
Outcome federated_generalization(Context& ctx) {
  ctx.adam();
  const auto& cfg = ctx.desk_cfg();
  auto log = [](const std::string& l) { std::fprintf(stderr, "  %s\n", l.c_str()); };
  pipeline::cmd_train_local(cfg, log);
  const auto r = pipeline::cmd_report(cfg, log);
  const double off = r.matrix.mean_off_diagonal();
  const double fed_mean = r.fed_mean_validation();
  const bool vehicle_differs = r.trace_local_model != cfg.report.trace_vehicle;
  return {off > fed_mean && r.trace_mae_fed < r.trace_mae_local && vehicle_differs,
          "local off-diagonal " + fmt(off) + " Wh (diagonal " + fmt(r.matrix.mean_diagonal()) + ") vs federated " +
              fmt(fed_mean) + " Wh; held-out trip of vehicle " + std::to_string(cfg.report.trace_vehicle) +
              ": federated " + fmt(r.trace_mae_fed) + " Wh vs local model " + std::to_string(r.trace_local_model) +
              " " + fmt(r.trace_mae_local) + " Wh"};
}

// 7. SGD converges to a loss at least 20% above Adam's.
Outcome optimizer_ordering(Context& ctx) {
  const auto& adam = ctx.adam();
  auto sgd_cfg = ctx.desk_cfg();
  sgd_cfg.federation_training.optimizer = nn::OptimizerKind::sgd;
  // Same corpus files and seeds, separate output directory.
  sgd_cfg.output_dir = ctx.work / "desk_sgd";
  fs::remove_all(sgd_cfg.output_dir);
  fs::create_directories(sgd_cfg.output_dir);
  fs::copy(pipeline::paths(ctx.desk_cfg()).data(), pipeline::paths(sgd_cfg).data(), fs::copy_options::recursive);
  const auto sgd = pipeline::cmd_train_fed(sgd_cfg, [](const std::string& l) { std::fprintf(stderr, "  sgd %s\n", l.c_str()); });
  const double a = adam.rounds.back().global_train_loss_wh;
  const double s = sgd.rounds.back().global_train_loss_wh;
  auto mean = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };
  const double av = mean(adam.rounds.back().validation_loss_wh);
  const double sv = mean(sgd.rounds.back().validation_loss_wh);
  return {s >= 1.2 * a && sgd.rounds.size() == 25,
          "round-25 training MAE: sgd " + fmt(s) + " Wh vs adam " + fmt(a) + " Wh (ratio " + fmt(s / a) +
              "); mean validation sgd " + fmt(sv) + " vs adam " + fmt(av)};
}

// 8. Aggregation algebra.
Outcome aggregation_algebra(Context&) {
  auto model = [](std::vector<double> v) {
    nn::ModelParameters p;
    p.values = std::move(v);
    return p;
  };
  bool ok = true;
  std::string detail;
  Rng rng(8);
  std::vector<double> w(257);
  for (auto& x : w) x = rng.uniform(-3.0, 3.0);
  const auto single = fed::aggregate({{4, model(w), 17}});
  ok &= single.values == w;
  detail += std::string("identity ") + (single.values == w ? "exact" : "differs");

  const auto mid = fed::aggregate({{0, model({0.0}), 50}, {1, model({1.0}), 50}});
  ok &= mid.values == std::vector<double>{0.5};
  detail += ", equal-count mean " + fmt(mid.values[0], 17);

  const auto weighted = fed::aggregate({{0, model({1.0}), 100}, {1, model({2.0}), 300}});
  ok &= weighted.values == std::vector<double>{1.75};
  detail += ", 100/300 " + fmt(weighted.values[0], 17);

  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(rng.integer(1, 20)));
    for (auto& c : counts) c = static_cast<std::size_t>(rng.integer(1, 5000));
    double sum = 0.0;
    for (double x : fed::aggregation_weights(counts)) sum += x;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  ok &= worst <= 1e-15;
  detail += ", max |sum(weights) - 1| " + fmt(worst);
  return {ok, detail};
}

// 9. Two full pipeline runs are byte-identical.
Outcome determinism(Context& ctx) {
  auto j = nlohmann::json::parse(io::read_text(ctx.desk_config));
  j["fleet"] = {{"size", 4}, {"trips_per_vehicle", 2}, {"trip_duration_s", 200}};
  j["model"]["hidden"] = {8, 8};
  j["local_training"]["epochs"] = 4;
  j["federation"]["rounds"] = 3;
  j["federation"]["epochs"] = 2;
  j["federation"]["participation"] = 0.5;
  j["threads"] = 2;
  std::vector<std::map<std::string, std::string>> snaps;
  for (const char* name : {"twin_a", "twin_b"}) {
    j["output_dir"] = (ctx.work / name).string();
    const auto cfg = config::parse(j);
    fs::remove_all(cfg.output_dir);
    pipeline::cmd_gen_data(cfg);
    pipeline::cmd_train_local(cfg);
    pipeline::cmd_train_fed(cfg);
    pipeline::cmd_report(cfg);
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(cfg.output_dir)) {
      const auto ext = e.path().extension();
      if (ext == ".ckpt" || ext == ".jsonl" || ext == ".csv") {
        files[fs::relative(e.path(), cfg.output_dir).string()] = io::read_text(e.path());
      }
    }
    snaps.push_back(std::move(files));
  }
  std::size_t ckpt = 0, csv = 0, logs = 0, differ = 0;
  for (const auto& [name, content] : snaps[0]) {
    const auto it = snaps[1].find(name);
    differ += it == snaps[1].end() || it->second != content;
    ckpt += name.ends_with(".ckpt");
    logs += name.ends_with(".jsonl");
    csv += name.find("report") == 0 && name.ends_with(".csv");
  }
  return {differ == 0 && snaps[0].size() == snaps[1].size() && ckpt == 5 && logs == 1 && csv >= 4,
          std::to_string(snaps[0].size()) + " files compared (" + std::to_string(ckpt) + " checkpoints, " +
              std::to_string(logs) + " round log, " + std::to_string(csv) + " report CSVs), " +
              std::to_string(differ) + " differ"};
}

// 10. Energy accounting for every simulated trip.
Outcome energy_accounting(Context& ctx) {
  const auto& cfg = ctx.desk_cfg();
  struct Run {
    powertrain::TripSimulation sim;
    double capacity;
  };
  std::vector<Run> runs;
  for (auto& s : ftp_runs()) runs.push_back({std::move(s), powertrain::VehicleParams{}.battery_capacity});
  for (std::size_t i = 0; i < cfg.clients(); ++i) {
    const auto& v = cfg.fleet.vehicles[i];
    auto vp = cfg.vehicle;
    vp.mass = v.mass;
    for (std::size_t j = 0; j < v.trips; ++j) {
      const auto cycle =
          drivecycle::build_cycle(v.driver, v.terrain, v.trip_duration, derive_seed(cfg.seed, "accounting", i * 100 + j));
      runs.push_back({powertrain::simulate_trip(cycle, vp, cfg.controller, cfg.fleet.soc0), vp.battery_capacity});
    }
  }
  // A battery that runs flat mid-trip and one that starts nearly full on a descent.
  powertrain::VehicleParams small;
  small.battery_capacity = 60.0;
  const auto climb = drivecycle::build_cycle(drivecycle::DriverProfile{}, drivecycle::TerrainModel::constant(0.05), 900, 3);
  runs.push_back({powertrain::simulate_trip(climb, small, {}, 0.5), small.battery_capacity});
  const auto descent =
      drivecycle::build_cycle(drivecycle::DriverProfile{}, drivecycle::TerrainModel::constant(-0.08), 900, 4);
  runs.push_back({powertrain::simulate_trip(descent, small, {}, 0.98), small.battery_capacity});

  std::size_t bad = 0, depleted = 0;
  double worst = 0.0;
  for (const auto& [sim, capacity] : runs) {
    long double sum = 0.0L;
    for (double e : sim.record.energy) sum += e;
    const double expected = (sim.soc_initial - sim.soc_final) * capacity;
    const double rel = std::abs(static_cast<double>(sum) - expected) / std::max(std::abs(expected), 1e-12);
    worst = std::max(worst, rel);
    bad += rel > 1e-9;
    depleted += sim.depleted;
  }
  return {bad == 0 && depleted >= 1,
          std::to_string(runs.size()) + " trips (" + std::to_string(depleted) + " depleted), worst relative error " +
              fmt(worst)};
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.desk_config = fs::path(FEDBEV_SOURCE_DIR) / "configs" / "desk.json";
  ctx.work = fs::temp_directory_path() / "fedbev_acceptance";
  std::set<int> only;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--config") {
      ctx.desk_config = argv[i + 1];
    } else if (flag == "--work") {
      ctx.work = argv[i + 1];
    } else if (flag == "--only") {
      std::stringstream ss(argv[i + 1]);
      for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
    } else {
      std::fprintf(stderr, "unknown flag %s\n", flag.c_str());
      return 2;
    }
  }
  fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"window-label identity", window_labels},
      {"slope monotonicity", slope_monotonicity},
      {"speed tracking", speed_tracking},
      {"federated convergence", federated_convergence},
      {"federated generalization", federated_generalization},
      {"optimizer ordering", optimizer_ordering},
      {"aggregation algebra", aggregation_algebra},
      {"determinism", determinism},
      {"energy accounting", energy_accounting},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
