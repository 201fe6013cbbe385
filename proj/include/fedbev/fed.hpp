#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbev/common.hpp"
#include "fedbev/dataset.hpp"
#include "fedbev/evaluate.hpp"
#include "fedbev/io.hpp"
#include "fedbev/nn.hpp"

namespace fedbev::fed {

struct FedConfig {
  std::size_t rounds = 25;
  double participation = 1.0;  // C
  nn::TrainSettings local;
  std::uint64_t seed = 0;
  /// Local updates run concurrently on up to this many threads.
  std::size_t threads = 1;
  /// Wall-clock durations make round logs non-reproducible; off by default.
  bool record_wall_clock = false;

  void validate() const {
    require(participation > 0.0 && participation <= 1.0, "federation: participation must lie in (0, 1]");
    require(threads >= 1, "federation: threads must be at least 1");
    local.hyper.validate();
  }
};

/// A participating vehicle. Sample sets hold scaled windows.
struct ClientHandle {
  std::size_t id = 0;
  std::vector<dataset::WindowedSample> train;
  std::vector<dataset::WindowedSample> validation;

  std::size_t sample_count() const { return train.size(); }
};

/// Number of clients sampled per round: max(floor(C N), 1).
inline std::size_t sampled_count(std::size_t n_clients, double participation) {
  require(n_clients >= 1, "federation: need at least one client");
  require(participation > 0.0 && participation <= 1.0, "federation: participation must lie in (0, 1]");
  const auto s = static_cast<std::size_t>(std::floor(participation * static_cast<double>(n_clients) + 1e-9));
  return std::clamp<std::size_t>(s, 1, n_clients);
}

/// Uniform s-subset of {0..N-1} without replacement, ascending, determined
/// by (seed, round).
inline std::vector<std::size_t> sample_clients(std::size_t n_clients, double participation, std::size_t round,
                                               std::uint64_t seed) {
  const std::size_t s = sampled_count(n_clients, participation);
  std::vector<std::size_t> ids(n_clients);
  for (std::size_t i = 0; i < n_clients; ++i) ids[i] = i;
  Rng rng(derive_seed(seed, "sample", round));
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.index(n_clients - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(s);
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct ClientUpdate {
  std::size_t id = 0;
  nn::ModelParameters params;
  std::size_t samples = 0;
};

/// n_i / sum(n) in the given order.
inline std::vector<double> aggregation_weights(const std::vector<std::size_t>& counts) {
  require(!counts.empty(), "aggregate: no updates");
  double total = 0.0;
  for (auto c : counts) {
    require(c > 0, "aggregate: sample counts must be positive");
    total += static_cast<double>(c);
  }
  std::vector<double> w;
  w.reserve(counts.size());
  for (auto c : counts) w.push_back(static_cast<double>(c) / total);
  return w;
}

/// Sample-count weighted mean of the updates, summed in ascending client id
/// order. Computed as offsets from the lowest-id update, so identical
/// inputs reproduce that input bit-for-bit.
inline nn::ModelParameters aggregate(std::vector<ClientUpdate> updates) {
  require(!updates.empty(), "aggregate: no updates");
  std::sort(updates.begin(), updates.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  const auto& ref = updates.front().params;
  std::vector<std::size_t> counts;
  for (const auto& u : updates) {
    require(u.params.shape == ref.shape && u.params.values.size() == ref.values.size(),
            "aggregate: update from client " + std::to_string(u.id) + " has a different shape");
    counts.push_back(u.samples);
  }
  const auto weights = aggregation_weights(counts);
  nn::ModelParameters out = ref;
  for (std::size_t k = 1; k < updates.size(); ++k) {
    const auto& v = updates[k].params.values;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] += weights[k] * (v[i] - ref.values[i]);
    }
  }
  return out;
}

struct ClientRound {
  std::size_t id = 0;
  std::size_t samples = 0;
  double train_loss_wh = 0.0;
  bool failed = false;
  std::string error;
  bool operator==(const ClientRound&) const = default;
};

struct RoundReport {
  std::size_t round = 0;  // 1-based
  std::vector<std::size_t> selected;
  std::vector<ClientRound> clients;       // one entry per selected client
  std::vector<double> validation_loss_wh; // aggregated model on every client's validation set
  double global_train_loss_wh = 0.0;
  double duration_s = 0.0;
  bool operator==(const RoundReport&) const = default;
};

struct FedResult {
  nn::ModelParameters initial;
  nn::ModelParameters final_params;
  std::vector<RoundReport> rounds;
};

/// Client-side update contract. The default trains locally with train_local.
using LocalUpdateFn = std::function<nn::TrainResult(const ClientHandle&, const nn::ModelParameters& global,
                                                    std::size_t round, std::uint64_t seed)>;

struct FedHooks {
  LocalUpdateFn local_update;
  /// Returns true when a client drops out of a round before receiving ω_t.
  std::function<bool(std::size_t round, std::size_t client)> drop_out;
  /// Called after each round, e.g. to append to a log.
  std::function<void(const RoundReport&)> on_round;
};

inline std::uint64_t local_seed(std::uint64_t seed, std::size_t round, std::size_t client) {
  return derive_seed(derive_seed(seed, "local", round), "client", client);
}

/// FedAvg server loop.
inline FedResult run_federated(const std::vector<ClientHandle>& clients, const nn::ModelConfig& model,
                               const FedConfig& cfg, const dataset::ScalingSpec& scaling,
                               const FedHooks& hooks = {}) {
  require(!clients.empty(), "federation: need at least one client");
  cfg.validate();
  model.validate();
  for (std::size_t i = 0; i < clients.size(); ++i) {
    require(clients[i].id == i, "federation: client ids must be 0..N-1 in order");
    require(clients[i].sample_count() > 0, "federation: client " + std::to_string(i) + " has no training samples");
  }
  LocalUpdateFn update = hooks.local_update;
  if (!update) {
    update = [&cfg](const ClientHandle& c, const nn::ModelParameters& w, std::size_t, std::uint64_t seed) {
      return nn::train_local(w, c.train, cfg.local, seed);
    };
  }

  FedResult result;
  result.initial = nn::init_params(model);
  nn::ModelParameters global = result.initial;
  const std::size_t n = clients.size();

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const auto started = std::chrono::steady_clock::now();
    RoundReport report;
    report.round = t;
    report.selected = sample_clients(n, cfg.participation, t, cfg.seed);

    std::vector<std::size_t> active;
    for (std::size_t id : report.selected) {
      ClientRound cr;
      cr.id = id;
      if (hooks.drop_out && hooks.drop_out(t, id)) {
        cr.failed = true;
        cr.error = "dropped out";
      } else {
        cr.samples = clients[id].sample_count();
        active.push_back(id);
      }
      report.clients.push_back(cr);
    }

    // Each task gets its own copy of ω_t; results land in fixed slots.
    std::vector<std::optional<nn::TrainResult>> results(n);
    std::vector<std::string> errors(n);
    auto run_one = [&](std::size_t id) {
      try {
        results[id] = update(clients[id], global, t, local_seed(cfg.seed, t, id));
      } catch (const std::exception& e) {
        errors[id] = e.what();
      }
    };
    if (cfg.threads <= 1 || active.size() <= 1) {
      for (std::size_t id : active) run_one(id);
    } else {
      for (std::size_t start = 0; start < active.size(); start += cfg.threads) {
        std::vector<std::future<void>> tasks;
        for (std::size_t k = start; k < std::min(active.size(), start + cfg.threads); ++k) {
          tasks.push_back(std::async(std::launch::async, run_one, active[k]));
        }
        for (auto& f : tasks) f.get();
      }
    }

    std::vector<ClientUpdate> updates;
    double loss_acc = 0.0;
    std::size_t loss_n = 0;
    for (auto& cr : report.clients) {
      if (cr.failed) continue;
      auto& r = results[cr.id];
      if (!r || r->params.shape != global.shape || r->params.values.size() != global.values.size()) {
        cr.failed = true;
        cr.error = r ? "update has a different shape" : errors[cr.id];
        continue;
      }
      const double loss_scaled = r->loss_trace.empty()
                                     ? eval::evaluate(r->params, clients[cr.id].train, scaling) / scaling.label_scale
                                     : r->loss_trace.back();
      cr.train_loss_wh = dataset::unscale_label(loss_scaled, scaling);
      loss_acc += cr.train_loss_wh * static_cast<double>(cr.samples);
      loss_n += cr.samples;
      updates.push_back({cr.id, std::move(r->params), cr.samples});
    }
    if (!updates.empty()) global = aggregate(std::move(updates));
    report.global_train_loss_wh = loss_n > 0 ? loss_acc / static_cast<double>(loss_n) : 0.0;

    report.validation_loss_wh.reserve(n);
    for (const auto& c : clients) {
      report.validation_loss_wh.push_back(c.validation.empty() ? 0.0 : eval::evaluate(global, c.validation, scaling));
    }
    if (cfg.record_wall_clock) {
      report.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    if (hooks.on_round) hooks.on_round(report);
    result.rounds.push_back(std::move(report));
  }
  result.final_params = std::move(global);
  return result;
}

// ---------------------------------------------------------------------------
// Round log (JSONL)

inline std::string serialize_round(const RoundReport& r) {
  require(!r.selected.empty(), "serialize_round: report has an empty client selection");
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& c : r.clients) {
    nlohmann::json j = {{"id", c.id}, {"samples", c.samples}, {"train_loss_wh", c.train_loss_wh}, {"failed", c.failed}};
    if (!c.error.empty()) j["error"] = c.error;
    clients.push_back(std::move(j));
  }
  nlohmann::json j = {{"round", r.round},
                      {"selected", r.selected},
                      {"clients", clients},
                      {"validation_loss_wh", r.validation_loss_wh},
                      {"global_train_loss_wh", r.global_train_loss_wh},
                      {"duration_s", r.duration_s}};
  return j.dump();
}

inline RoundReport parse_round(const std::string& line, const std::string& source = "<round log>") {
  try {
    const auto j = nlohmann::json::parse(line);
    RoundReport r;
    r.round = j.at("round").get<std::size_t>();
    r.selected = j.at("selected").get<std::vector<std::size_t>>();
    for (const auto& c : j.at("clients")) {
      ClientRound cr;
      cr.id = c.at("id").get<std::size_t>();
      cr.samples = c.at("samples").get<std::size_t>();
      cr.train_loss_wh = c.at("train_loss_wh").get<double>();
      cr.failed = c.at("failed").get<bool>();
      cr.error = c.value("error", "");
      r.clients.push_back(std::move(cr));
    }
    r.validation_loss_wh = j.at("validation_loss_wh").get<std::vector<double>>();
    r.global_train_loss_wh = j.at("global_train_loss_wh").get<double>();
    r.duration_s = j.at("duration_s").get<double>();
    if (r.selected.empty()) throw FormatError(source, "round " + std::to_string(r.round) + " has no selected clients");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source, std::string("malformed round record: ") + e.what());
  }
}

inline void append_round(const std::filesystem::path& log, const RoundReport& r) {
  io::append_line(log, serialize_round(r));
}

inline std::vector<RoundReport> read_round_log(const std::filesystem::path& log) {
  std::vector<RoundReport> out;
  const auto rows = io::lines(io::read_text(log));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (trim(rows[i]).empty()) continue;
    out.push_back(parse_round(rows[i], log.string() + ":" + std::to_string(i + 1)));
  }
  return out;
}

}  // namespace fedbev::fed
