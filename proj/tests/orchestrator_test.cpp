#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fssuavl/error.hpp"
#include "fssuavl/orchestrator.hpp"
#include "fssuavl/rng.hpp"
#include "support/tiny.hpp"

namespace fssuavl {
namespace {

using test::TinyCorpus;
using test::tiny_pretrain;

NamedTensors random_model(std::uint64_t seed) {
  Rng rng(seed);
  NamedTensors m;
  m["a.weight"] = Tensor({3, 4});
  m["b.bias"] = Tensor({5});
  m["bn.running_var"] = Tensor({2});
  for (auto& [name, t] : m)
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return m;
}

TEST(SampleClients, FullParticipation) {
  for (int r = 1; r <= 3; ++r) {
    const auto ids = sample_clients(7, 1.0, 5, r);
    ASSERT_EQ(ids.size(), 7u);
    for (int i = 0; i < 7; ++i) EXPECT_EQ(ids[i], i);
  }
}

TEST(SampleClients, TenPercentOfHundred) {
  for (int r = 1; r <= 20; ++r) {
    const auto ids = sample_clients(100, 0.1, 9, r);
    EXPECT_EQ(ids.size(), 10u);
    EXPECT_EQ(std::set<int>(ids.begin(), ids.end()).size(), 10u);
    for (int id : ids) EXPECT_TRUE(id >= 0 && id < 100);
  }
}

TEST(SampleClients, DeterministicPerSeedAndRound) {
  EXPECT_EQ(sample_clients(50, 0.2, 3, 4), sample_clients(50, 0.2, 3, 4));
  EXPECT_NE(sample_clients(50, 0.2, 3, 4), sample_clients(50, 0.2, 3, 5));
  EXPECT_NE(sample_clients(50, 0.2, 3, 4), sample_clients(50, 0.2, 4, 4));
}

TEST(SampleClients, AtLeastOneClient) {
  EXPECT_EQ(selected_count(0.1, 4), 1);
  EXPECT_EQ(selected_count(0.5, 8), 4);
  EXPECT_EQ(sample_clients(4, 0.01, 1, 1).size(), 1u);
  EXPECT_THROW(selected_count(0.0, 4), ContractError);
  EXPECT_THROW(selected_count(1.5, 4), ContractError);
}

TEST(SampleClients, RoughlyUniform) {
  std::vector<int> hits(20, 0);
  const int rounds = 4000;
  for (int r = 1; r <= rounds; ++r)
    for (int id : sample_clients(20, 0.25, 11, r)) ++hits[id];
  // Each client is picked with probability 5/20.
  const double expect = rounds * 0.25, sd = std::sqrt(rounds * 0.25 * 0.75);
  for (int h : hits) EXPECT_NEAR(h, expect, 5 * sd);
}

TEST(FedAvg, WeightedMeanExample) {
  const NamedTensors a{{"w", Tensor({2}, {1, 2})}}, b{{"w", Tensor({2}, {3, 4})}};
  const auto out = fedavg({a, b}, {10, 30});
  EXPECT_EQ(out.at("w"), Tensor({2}, {2.5f, 3.5f}));
  const auto beta = fedavg_coefficients({10, 30});
  EXPECT_DOUBLE_EQ(beta[0], 0.25);
  EXPECT_DOUBLE_EQ(beta[1], 0.75);
}

TEST(FedAvg, FixedPointAndSingleModelIdentity) {
  const auto m = random_model(1);
  EXPECT_EQ(fedavg({m}, {17}), m);
  EXPECT_EQ(fedavg({m, m, m}, {1, 2, 3}), m);
}

TEST(FedAvg, EqualSizesMatchElementwiseMean) {
  std::vector<NamedTensors> models;
  for (std::uint64_t s = 0; s < 5; ++s) models.push_back(random_model(s));
  const auto out = fedavg(models, std::vector<double>(5, 4.0));
  for (const auto& [name, t] : out)
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double sum = 0;
      for (const auto& m : models) sum += m.at(name).data[i];
      EXPECT_NEAR(t.data[i], sum / 5, 1e-6) << name << "[" << i << "]";
    }
}

TEST(FedAvg, PermutationInvariant) {
  std::vector<NamedTensors> models;
  std::vector<double> sizes;
  for (std::uint64_t s = 0; s < 6; ++s) {
    models.push_back(random_model(s + 10));
    sizes.push_back(1 + static_cast<double>(s * 7 % 11));
  }
  const auto ref = fedavg(models, sizes);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> perm(models.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<NamedTensors> pm;
    std::vector<double> ps;
    for (auto p : perm) {
      pm.push_back(models[p]);
      ps.push_back(sizes[p]);
    }
    const auto out = fedavg(pm, ps);
    for (const auto& [name, t] : out)
      for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_FLOAT_EQ(t.data[i], ref.at(name).data[i]);
  }
}

TEST(FedAvg, CoefficientsSumToOne) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> sizes(1 + rng.index(30));
    for (auto& d : sizes) d = 1 + static_cast<double>(rng.index(5000));
    const auto beta = fedavg_coefficients(sizes);
    double sum = 0;
    for (double b : beta) sum += b;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(FedAvg, MismatchNamesTheTensor) {
  auto a = random_model(1), b = random_model(2);
  b["b.bias"] = Tensor({6});
  try {
    fedavg({a, b}, {1, 1});
    FAIL();
  } catch (const AggregationError& e) {
    EXPECT_NE(std::string(e.what()).find("b.bias"), std::string::npos);
  }
  auto c = random_model(3);
  c.erase("bn.running_var");
  try {
    fedavg({a, c}, {1, 1});
    FAIL();
  } catch (const AggregationError& e) {
    EXPECT_NE(std::string(e.what()).find("bn.running_var"), std::string::npos);
  }
  EXPECT_THROW(fedavg({a, a}, {1, 0}), AggregationError);
  EXPECT_THROW(fedavg({}, {}), AggregationError);
}

TEST(RunPretraining, ZeroRoundsKeepsInitialWeights) {
  TinyCorpus corpus(2, 8, 1);
  auto cfg = tiny_pretrain(1);
  cfg.federation.rounds = 0;
  const auto res = run_pretraining(cfg, corpus.partition(4, {}, 1).clients, corpus.images, corpus.audio);
  EXPECT_EQ(res.final_weights, initial_weights(cfg));
  EXPECT_TRUE(res.rounds.empty());
}

TEST(RunPretraining, TwoRoundsFourClients) {
  TinyCorpus corpus(2, 8, 2);
  const auto cfg = tiny_pretrain(2);
  int calls = 0;
  const auto res = run_pretraining(cfg, corpus.partition(4, {}, 2).clients, corpus.images, corpus.audio,
                                   [&](const RoundResult& r, const NamedTensors& g) {
                                     EXPECT_EQ(r.round, ++calls);
                                     EXPECT_TRUE(std::all_of(g.begin(), g.end(),
                                                             [](const auto& kv) { return kv.second.all_finite(); }));
                                   });
  ASSERT_EQ(res.rounds.size(), 2u);
  EXPECT_EQ(calls, 2);
  for (const auto& r : res.rounds) {
    EXPECT_EQ(r.selected(), (std::vector<int>{0, 1, 2, 3}));
    EXPECT_NEAR(r.beta_sum, 1.0, 1e-9);
  }
  EXPECT_NE(res.final_weights, res.initial);
}

TEST(RunPretraining, BitwiseDeterministic) {
  TinyCorpus corpus(2, 8, 3);
  auto cfg = tiny_pretrain(3);
  cfg.federation.participation_fraction = 0.5;
  const auto clients = corpus.partition(4, {}, 3).clients;
  const auto a = run_pretraining(cfg, clients, corpus.images, corpus.audio);
  const auto b = run_pretraining(cfg, clients, corpus.images, corpus.audio);
  EXPECT_EQ(a.final_weights, b.final_weights);
  cfg.seed = 4;
  EXPECT_NE(run_pretraining(cfg, clients, corpus.images, corpus.audio).final_weights, a.final_weights);
}

TEST(RunPretraining, ClientsStartFromTheBroadcastWeights) {
  // One round by hand: every selected client trains from w_g^1 on its own, and
  // the aggregate must match what the orchestrator produced.
  TinyCorpus corpus(2, 8, 5);
  auto cfg = tiny_pretrain(5);
  cfg.federation.rounds = 1;
  const auto clients = corpus.partition(3, {}, 5).clients;
  const auto res = run_pretraining(cfg, clients, corpus.images, corpus.audio);
  const NamedTensors w0 = initial_weights(cfg);
  const std::uint64_t round_seed = derive_seed(cfg.seed, {hash_name("round"), 1});
  std::vector<NamedTensors> local;
  std::vector<double> sizes;
  for (int id : res.rounds[0].selected()) {
    local.push_back(
        local_train(cfg.encoder, w0, clients[id], corpus.images, corpus.audio, cfg.ssl, cfg.featurize, round_seed)
            .weights);
    sizes.push_back(static_cast<double>(clients[id].size()));
  }
  EXPECT_EQ(fedavg(local, sizes), res.final_weights);
}

TEST(RunPretraining, LossTrendsDown) {
  std::vector<double> drops;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TinyCorpus corpus(4, 8, 10 + seed);
    auto cfg = tiny_pretrain(seed);
    cfg.federation.rounds = 5;
    cfg.ssl.local_epochs = 2;
    const auto res = run_pretraining(cfg, corpus.partition(4, {}, seed).clients, corpus.images, corpus.audio);
    drops.push_back(res.rounds.front().mean_final_epoch_loss() - res.rounds.back().mean_final_epoch_loss());
  }
  std::sort(drops.begin(), drops.end());
  EXPECT_GT(drops[1], 0.0);
}

TEST(RunPretraining, DivergenceHaltsWithRound) {
  TinyCorpus corpus(2, 8, 6);
  const auto cfg = tiny_pretrain(6);
  auto start = initial_weights(cfg);
  for (auto& v : start.at("stem.conv.weight").data) v = std::numeric_limits<float>::infinity();
  try {
    run_pretraining(cfg, corpus.partition(4, {}, 6).clients, corpus.images, corpus.audio, {}, &start);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("round 1"), std::string::npos);
  }
}

TEST(RunPretraining, BatchBudgetStopsAtTheFirstRoundReachingIt) {
  TinyCorpus corpus(2, 8, 11);
  auto cfg = tiny_pretrain(11);
  cfg.federation.rounds = 6;
  const auto clients = corpus.partition(4, {}, 11).clients;
  const auto full = run_pretraining(cfg, clients, corpus.images, corpus.audio);
  const std::size_t per_round = full.rounds.front().batch_count();
  cfg.federation.batch_budget = static_cast<std::int64_t>(2 * per_round + 1);
  const auto capped = run_pretraining(cfg, clients, corpus.images, corpus.audio);
  ASSERT_EQ(capped.rounds.size(), 3u);
  EXPECT_GE(capped.batch_count(), 2 * per_round + 1);
  // The budget only truncates; the rounds that ran are the same ones.
  for (std::size_t r = 0; r < capped.rounds.size(); ++r)
    EXPECT_EQ(capped.rounds[r].selected(), full.rounds[r].selected());
}

TEST(RunPretraining, RejectsMisnumberedClients) {
  TinyCorpus corpus(2, 8, 7);
  auto clients = corpus.partition(4, {}, 7).clients;
  std::swap(clients[0], clients[1]);
  EXPECT_THROW(run_pretraining(tiny_pretrain(7), clients, corpus.images, corpus.audio), ContractError);
}

TEST(ModelCombination, TwoIsolatedExperts) {
  TinyCorpus corpus(2, 8, 8);
  const auto cfg = tiny_pretrain(8);
  const auto part = corpus.partition(4, {0.5, 0.5, 0.0}, 8);
  const auto mc = run_model_combination(cfg, part.clients, corpus.images, corpus.audio);
  EXPECT_EQ(mc.image_clients.size(), 2u);
  EXPECT_EQ(mc.audio_clients.size(), 2u);
  EXPECT_NE(mc.image_expert.final_weights, mc.audio_expert.final_weights);
  for (const auto& r : mc.image_expert.rounds)
    for (const auto& c : r.clients)
      for (const auto& b : c.trace) EXPECT_EQ(b.modality, Modality::image);
  for (const auto& r : mc.audio_expert.rounds)
    for (const auto& c : r.clients)
      for (const auto& b : c.trace) EXPECT_EQ(b.modality, Modality::audio);

  // Same clients, full participation: the two experts together do exactly the
  // local work of one shared-encoder run.
  const auto shared = run_pretraining(cfg, part.clients, corpus.images, corpus.audio);
  EXPECT_EQ(mc.image_expert.batch_count() + mc.audio_expert.batch_count(), shared.batch_count());
}

TEST(ModelCombination, RejectsBimodalClients) {
  TinyCorpus corpus(2, 8, 9);
  EXPECT_THROW(run_model_combination(tiny_pretrain(9), corpus.partition(4, {}, 9).clients, corpus.images, corpus.audio),
               ContractError);
}

TEST(FederationConfig, ListsEveryBadField) {
  FederationConfig f;
  f.participation_fraction = 0;
  f.rounds = -1;
  f.batch_budget = -5;
  try {
    f.validate();
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("participation_fraction"), std::string::npos);
    EXPECT_NE(msg.find("rounds"), std::string::npos);
    EXPECT_NE(msg.find("batch_budget"), std::string::npos);
  }
}

}  // namespace
}  // namespace fssuavl
