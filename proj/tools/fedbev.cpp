#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedbev/config.hpp"
#include "fedbev/pipeline.hpp"

namespace {

using namespace fedbev;

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kConfig = 3, kIo = 4 };

int report_error(const std::string& kind, const std::string& message, int code, nlohmann::json extra = {}) {
  nlohmann::json err = {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  if (extra.is_object()) err["error"].update(extra);
  std::cerr << err.dump() << std::endl;
  return code;
}

struct Options {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

config::RunConfig load_config(const Options& o) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(o.config));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(o.config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError(o.config, "config must be a JSON object");
  if (o.seed) j["seed"] = *o.seed;
  if (o.out) j["output_dir"] = *o.out;
  return config::parse(j);
}

nlohmann::json summarize(const std::vector<pipeline::VehicleSummary>& s) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& x : s) {
    v.push_back({{"id", x.id}, {"trips", x.trips}, {"samples", x.samples}, {"train_samples", x.train_samples},
                 {"terrain_source", x.terrain_source}});
  }
  return {{"vehicles", v}};
}

nlohmann::json summarize(const pipeline::ReportResult& r) {
  nlohmann::json j = {{"matrix_mean_diagonal_wh", r.matrix.mean_diagonal()},
                      {"fed_mean_validation_wh", r.fed_mean_validation()},
                      {"fed_validation_wh", r.fed_validation_wh},
                      {"trace_local_model", r.trace_local_model},
                      {"trace_mae_fed_wh", r.trace_mae_fed},
                      {"trace_mae_local_wh", r.trace_mae_local}};
  if (r.matrix.size() > 1) j["matrix_mean_off_diagonal_wh"] = r.matrix.mean_off_diagonal();
  return j;
}

int run(const std::string& command, const Options& o) {
  const auto cfg = load_config(o);
  pipeline::Logger logger;
  if (o.verbose) logger = [](const std::string& line) { std::cerr << line << std::endl; };
  nlohmann::json out = {{"command", command}, {"output_dir", cfg.output_dir.string()}};
  if (command == "gen-data") {
    out.update(summarize(pipeline::cmd_gen_data(cfg, logger)));
  } else if (command == "train-local") {
    const auto results = pipeline::cmd_train_local(cfg, logger);
    out["clients"] = results.size();
  } else if (command == "train-fed") {
    const auto result = pipeline::cmd_train_fed(cfg, logger);
    out["rounds"] = result.rounds.size();
  } else {
    out.update(summarize(pipeline::cmd_report(cfg, logger)));
  }
  std::cout << out.dump(2) << std::endl;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated BEV energy-consumption experiment driver"};
  app.require_subcommand(1);
  Options opts;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "Simulate the fleet corpus"},
      {"train-local", "Train one local baseline model per client"},
      {"train-fed", "Run federated averaging"},
      {"report", "Write the loss matrix, convergence, normalized and prediction-trace artifacts"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", opts.seed, "Master seed (overrides seed)");
    sub->add_flag("-v,--verbose", opts.verbose, "Progress on stderr");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("UsageError", e.what(), kUsage);
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, opts);
  } catch (const config::ConfigError& e) {
    return report_error(e.kind(), e.what(), kConfig, {{"field", e.field()}});
  } catch (const FormatError& e) {
    return report_error(e.kind(), e.what(), kIo, {{"file", e.file()}});
  } catch (const IoError& e) {
    return report_error(e.kind(), e.what(), kIo);
  } catch (const fedbev::Error& e) {
    return report_error(e.kind(), e.what(), kFailure);
  } catch (const std::exception& e) {
    return report_error("InternalError", e.what(), kFailure);
  }
}
