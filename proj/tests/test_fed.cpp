#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <stdexcept>

#include <gtest/gtest.h>

#include "fedbev/fed.hpp"

using namespace fedbev;
using namespace fedbev::fed;

namespace {

nn::ModelParameters scalar_params(double v) {
  nn::ModelParameters p;
  p.shape = {1, 1, {1}};
  p.values = {v};
  return p;
}

nn::ModelConfig tiny_model(std::uint64_t seed = 11) {
  nn::ModelConfig c;
  c.window = 4;
  c.input_dim = 2;
  c.hidden = {3};
  c.dropout_rate = 0.0;
  c.seed = seed;
  return c;
}

std::vector<dataset::WindowedSample> random_samples(std::size_t n, std::size_t window, Rng& rng) {
  std::vector<dataset::WindowedSample> out(n);
  for (auto& s : out) {
    s.window = window;
    s.features.resize(window * dataset::kFeatureDim);
    for (auto& f : s.features) f = rng.uniform(0.0, 1.0);
    s.label = 0.5 * s.features[0] - 0.1;
  }
  return out;
}

std::vector<ClientHandle> make_clients(std::size_t n, std::size_t window, std::uint64_t seed = 5) {
  Rng rng(seed);
  std::vector<ClientHandle> clients;
  for (std::size_t i = 0; i < n; ++i) {
    ClientHandle c;
    c.id = i;
    c.train = random_samples(10 + 3 * i, window, rng);
    c.validation = random_samples(5, window, rng);
    clients.push_back(std::move(c));
  }
  return clients;
}

FedConfig small_fed(std::size_t rounds) {
  FedConfig cfg;
  cfg.rounds = rounds;
  cfg.seed = 99;
  cfg.local.hyper.epochs = 2;
  cfg.local.hyper.batch_count = 2;
  cfg.local.dropout_rate = 0.0;
  return cfg;
}

}  // namespace

TEST(Aggregate, SingleUpdateIsIdentity) {
  Rng rng(1);
  nn::ModelParameters p = nn::init_params(tiny_model());
  for (auto& v : p.values) v = rng.uniform(-3.0, 3.0);
  const auto out = aggregate({{4, p, 17}});
  EXPECT_EQ(out.values, p.values);
}

TEST(Aggregate, EqualCountsGiveMidpoint) {
  const auto out = aggregate({{0, scalar_params(0.0), 8}, {1, scalar_params(1.0), 8}});
  EXPECT_EQ(out.values[0], 0.5);
}

TEST(Aggregate, WeightedByCounts) {
  const auto out = aggregate({{0, scalar_params(1.0), 100}, {1, scalar_params(2.0), 300}});
  EXPECT_EQ(out.values[0], 1.75);
}

TEST(Aggregate, IndependentOfInputOrder) {
  Rng rng(2);
  std::vector<ClientUpdate> ups;
  for (std::size_t i = 0; i < 6; ++i) ups.push_back({i, scalar_params(rng.uniform(-1, 1)), 1 + i * 7});
  const auto a = aggregate(ups);
  std::reverse(ups.begin(), ups.end());
  const auto b = aggregate(ups);
  EXPECT_EQ(a.values, b.values);
}

TEST(Aggregate, IdenticalModelsReturnedExactly) {
  Rng rng(3);
  nn::ModelParameters p = nn::init_params(tiny_model());
  for (auto& v : p.values) v = rng.uniform(-5.0, 5.0);
  std::vector<ClientUpdate> ups;
  for (std::size_t i = 0; i < 7; ++i) ups.push_back({i, p, 13 + 101 * i});
  EXPECT_EQ(aggregate(ups).values, p.values);
}

TEST(Aggregate, WeightsSumToOne) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(rng.integer(1, 30)));
    for (auto& c : counts) c = static_cast<std::size_t>(rng.integer(1, 100000));
    const auto w = aggregation_weights(counts);
    double sum = 0.0;
    for (double x : w) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
}

TEST(Aggregate, RejectsEmptyAndMismatchedShapes) {
  EXPECT_THROW(aggregate({}), InvalidArgument);
  EXPECT_THROW(aggregate({{0, scalar_params(1.0), 1}, {1, nn::init_params(tiny_model()), 1}}), InvalidArgument);
  EXPECT_THROW(aggregate({{0, scalar_params(1.0), 0}}), InvalidArgument);
}

TEST(Sampling, CountFollowsFloorWithFloorOfOne) {
  EXPECT_EQ(sampled_count(10, 1.0), 10u);
  EXPECT_EQ(sampled_count(10, 0.05), 1u);
  EXPECT_EQ(sampled_count(10, 0.2), 2u);
  EXPECT_EQ(sampled_count(10, 0.3), 3u);
  EXPECT_EQ(sampled_count(10, 0.7), 7u);
  EXPECT_EQ(sampled_count(3, 0.5), 1u);
  EXPECT_THROW(sampled_count(10, 0.0), InvalidArgument);
  EXPECT_THROW(sampled_count(10, 1.5), InvalidArgument);
  EXPECT_THROW(sampled_count(0, 1.0), InvalidArgument);
}

TEST(Sampling, FullParticipationSelectsEveryone) {
  const auto s = sample_clients(10, 1.0, 3, 42);
  ASSERT_EQ(s.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(s[i], i);
}

TEST(Sampling, ReplayIsDeterministicAndVariesAcrossRounds) {
  const auto a = sample_clients(10, 0.2, 4, 42);
  EXPECT_EQ(a, sample_clients(10, 0.2, 4, 42));
  ASSERT_EQ(a.size(), 2u);
  EXPECT_LT(a[0], a[1]);
  std::set<std::vector<std::size_t>> seen;
  for (std::size_t t = 1; t <= 30; ++t) seen.insert(sample_clients(10, 0.2, t, 42));
  EXPECT_GT(seen.size(), 5u);
}

TEST(Sampling, SingleClientRoughlyUniform) {
  std::vector<int> hits(10, 0);
  const int rounds = 20000;
  for (int t = 1; t <= rounds; ++t) ++hits[sample_clients(10, 0.05, t, 7)[0]];
  for (int h : hits) EXPECT_NEAR(h / static_cast<double>(rounds), 0.1, 0.012);
}

TEST(RunFederated, ZeroRoundsReturnsInitialization) {
  const auto clients = make_clients(3, 4);
  const auto model = tiny_model();
  const auto r = run_federated(clients, model, small_fed(0), {});
  EXPECT_EQ(r.final_params.values, nn::init_params(model).values);
  EXPECT_TRUE(r.rounds.empty());
}

TEST(RunFederated, SingleClientSingleRoundEqualsLocalTraining) {
  const auto clients = make_clients(1, 4);
  const auto model = tiny_model();
  const auto cfg = small_fed(1);
  const auto r = run_federated(clients, model, cfg, {});
  const auto local = nn::train_local(nn::init_params(model), clients[0].train, cfg.local, local_seed(cfg.seed, 1, 0));
  EXPECT_EQ(r.final_params.values, local.params.values);
}

TEST(RunFederated, ReportShapeAndDeterminism) {
  const auto clients = make_clients(4, 4);
  auto cfg = small_fed(3);
  cfg.participation = 0.5;
  const auto a = run_federated(clients, tiny_model(), cfg, {});
  const auto b = run_federated(clients, tiny_model(), cfg, {});
  EXPECT_EQ(a.final_params.values, b.final_params.values);
  ASSERT_EQ(a.rounds.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(a.rounds[t], b.rounds[t]);
    EXPECT_EQ(a.rounds[t].round, t + 1);
    EXPECT_EQ(a.rounds[t].selected.size(), 2u);
    EXPECT_EQ(a.rounds[t].validation_loss_wh.size(), 4u);
    for (double v : a.rounds[t].validation_loss_wh) EXPECT_TRUE(std::isfinite(v));
    for (const auto& c : a.rounds[t].clients) EXPECT_EQ(c.samples, clients[c.id].train.size());
  }
}

TEST(RunFederated, ThreadedMatchesSequential) {
  const auto clients = make_clients(5, 4);
  auto cfg = small_fed(2);
  const auto seq = run_federated(clients, tiny_model(), cfg, {});
  cfg.threads = 3;
  const auto par = run_federated(clients, tiny_model(), cfg, {});
  EXPECT_EQ(seq.final_params.values, par.final_params.values);
  EXPECT_EQ(seq.rounds, par.rounds);
}

TEST(RunFederated, FailedClientsExcludedAndNeverTouched) {
  const auto clients = make_clients(4, 4);
  const auto cfg = small_fed(2);
  std::mutex mu;
  std::vector<std::set<std::size_t>> touched(3);
  FedHooks hooks;
  hooks.drop_out = [](std::size_t round, std::size_t id) { return round == 1 && id == 2; };
  hooks.local_update = [&](const ClientHandle& c, const nn::ModelParameters& w, std::size_t round,
                           std::uint64_t seed) {
    {
      std::lock_guard lock(mu);
      touched[round].insert(c.id);
    }
    if (round == 2 && c.id == 0) throw std::runtime_error("link lost");
    return nn::train_local(w, c.train, cfg.local, seed);
  };
  const auto r = run_federated(clients, tiny_model(), cfg, {}, hooks);
  EXPECT_EQ(touched[1], (std::set<std::size_t>{0, 1, 3}));
  EXPECT_EQ(touched[2], (std::set<std::size_t>{0, 1, 2, 3}));
  EXPECT_TRUE(r.rounds[0].clients[2].failed);
  EXPECT_TRUE(r.rounds[1].clients[0].failed);
  EXPECT_EQ(r.rounds[1].clients[0].error, "link lost");

  // Round 1 aggregate equals the manual aggregate over the survivors.
  const auto w0 = nn::init_params(tiny_model());
  std::vector<ClientUpdate> ups;
  for (std::size_t id : {0u, 1u, 3u}) {
    ups.push_back({id, nn::train_local(w0, clients[id].train, cfg.local, local_seed(cfg.seed, 1, id)).params,
                   clients[id].train.size()});
  }
  const auto expected = aggregate(ups);
  FedConfig one = cfg;
  one.rounds = 1;
  EXPECT_EQ(run_federated(clients, tiny_model(), one, {}, hooks).final_params.values, expected.values);
}

TEST(RunFederated, AllClientsFailingKeepsModel) {
  const auto clients = make_clients(2, 4);
  FedHooks hooks;
  hooks.drop_out = [](std::size_t, std::size_t) { return true; };
  const auto r = run_federated(clients, tiny_model(), small_fed(2), {}, hooks);
  EXPECT_EQ(r.final_params.values, r.initial.values);
}

TEST(RunFederated, RejectsBadClients) {
  auto clients = make_clients(2, 4);
  clients[1].train.clear();
  EXPECT_THROW(run_federated(clients, tiny_model(), small_fed(1), {}), InvalidArgument);
  EXPECT_THROW(run_federated({}, tiny_model(), small_fed(1), {}), InvalidArgument);
}

TEST(RunFederated, OnRoundCallbackSeesEveryRound) {
  const auto clients = make_clients(2, 4);
  std::vector<std::size_t> rounds;
  FedHooks hooks;
  hooks.on_round = [&](const RoundReport& r) { rounds.push_back(r.round); };
  run_federated(clients, tiny_model(), small_fed(3), {}, hooks);
  EXPECT_EQ(rounds, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(RoundLog, RoundTripIsLossless) {
  RoundReport r;
  r.round = 7;
  r.selected = {1, 4};
  r.clients = {{1, 120, 0.1 + 0.2, false, ""}, {4, 95, 0.0, true, "dropped out"}};
  r.validation_loss_wh = {1.0 / 3.0, 2e-310, 12.5, -0.0};
  r.global_train_loss_wh = 3.14159;
  r.duration_s = 0.0;
  const auto back = parse_round(serialize_round(r));
  EXPECT_EQ(back, r);
  for (std::size_t i = 0; i < r.validation_loss_wh.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.validation_loss_wh[i]),
              std::bit_cast<std::uint64_t>(r.validation_loss_wh[i]));
  }
}

TEST(RoundLog, RejectsEmptySelection) {
  RoundReport r;
  r.round = 1;
  EXPECT_THROW(serialize_round(r), InvalidArgument);
  EXPECT_THROW(parse_round(R"({"round":1,"selected":[],"clients":[],"validation_loss_wh":[],)"
                           R"("global_train_loss_wh":0,"duration_s":0})"),
               FormatError);
  EXPECT_THROW(parse_round("{not json"), FormatError);
}

TEST(RoundLog, ReplayReproducesRunReports) {
  const auto dir = std::filesystem::temp_directory_path() / "fedbev_test_fed_log";
  std::filesystem::remove_all(dir);
  const auto log = dir / "rounds.jsonl";
  const auto clients = make_clients(3, 4);
  FedHooks hooks;
  hooks.on_round = [&](const RoundReport& r) { append_round(log, r); };
  const auto res = run_federated(clients, tiny_model(), small_fed(3), {}, hooks);
  const auto replay = read_round_log(log);
  EXPECT_EQ(replay, res.rounds);
  std::filesystem::remove_all(dir);
}
