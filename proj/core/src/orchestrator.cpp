#include "fssuavl/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "fssuavl/error.hpp"
#include "fssuavl/rng.hpp"

namespace fssuavl {

void FederationConfig::validate() const {
  std::vector<std::string> bad;
  if (!(participation_fraction > 0 && participation_fraction <= 1))
    bad.push_back("participation_fraction must be in (0, 1]");
  if (rounds < 0) bad.push_back("rounds must be >= 0");
  if (checkpoint_every < 0) bad.push_back("checkpoint_every must be >= 0");
  if (batch_budget < 0) bad.push_back("batch_budget must be >= 0");
  if (bad.empty()) return;
  std::string msg = "invalid federation config:";
  for (const auto& b : bad) msg += " federation." + b + ";";
  throw ConfigError(msg);
}

void PretrainConfig::validate() const {
  encoder.validate();
  ssl.validate();
  featurize.validate();
  federation.validate();
  if (encoder.input_side != featurize.side)
    throw ConfigError("invalid pretrain config: encoder.input_side " + std::to_string(encoder.input_side) +
                      " differs from featurize.side " + std::to_string(featurize.side));
  if (encoder.in_channels != 1) throw ConfigError("invalid pretrain config: encoder.in_channels must be 1");
}

int selected_count(double fraction, int n_clients) {
  if (n_clients < 1) throw ContractError("selected_count: no clients");
  if (!(fraction > 0 && fraction <= 1)) throw ContractError("selected_count: fraction must be in (0, 1]");
  return std::clamp(static_cast<int>(std::lround(fraction * n_clients)), 1, n_clients);
}

std::vector<int> sample_clients(int n_clients, double fraction, std::uint64_t seed, int round) {
  const int q = selected_count(fraction, n_clients);
  std::vector<int> ids(n_clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, {hash_name("sample"), static_cast<std::uint64_t>(round)}));
  // Partial Fisher-Yates: the first q positions are a uniform sample.
  for (int i = 0; i < q; ++i) std::swap(ids[i], ids[i + rng.index(n_clients - i)]);
  ids.resize(q);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<double> fedavg_coefficients(const std::vector<double>& sizes) {
  if (sizes.empty()) throw AggregationError("fedavg: no models");
  double total = 0;
  for (double d : sizes) {
    if (!(d > 0)) throw AggregationError("fedavg: client sizes must be > 0");
    total += d;
  }
  std::vector<double> beta(sizes.size());
  for (std::size_t q = 0; q < sizes.size(); ++q) beta[q] = sizes[q] / total;
  return beta;
}

NamedTensors fedavg(const std::vector<NamedTensors>& models, const std::vector<double>& sizes) {
  if (models.size() != sizes.size())
    throw AggregationError("fedavg: " + std::to_string(models.size()) + " models but " +
                           std::to_string(sizes.size()) + " sizes");
  const auto beta = fedavg_coefficients(sizes);
  const NamedTensors& ref = models.front();
  for (std::size_t q = 1; q < models.size(); ++q) {
    for (const auto& [name, t] : models[q]) {
      auto it = ref.find(name);
      if (it == ref.end())
        throw AggregationError("fedavg: tensor '" + name + "' of model " + std::to_string(q) + " is missing in model 0");
      if (it->second.shape != t.shape)
        throw AggregationError("fedavg: tensor '" + name + "' has shape " + shape_str(t.shape) + " in model " +
                               std::to_string(q) + " but " + shape_str(it->second.shape) + " in model 0");
    }
    for (const auto& [name, t] : ref)
      if (!models[q].count(name))
        throw AggregationError("fedavg: tensor '" + name + "' is missing in model " + std::to_string(q));
  }
  NamedTensors out;
  std::vector<double> acc;
  for (const auto& [name, t] : ref) {
    acc.assign(t.numel(), 0.0);
    for (std::size_t q = 0; q < models.size(); ++q) {
      const auto& src = models[q].at(name).data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += beta[q] * src[i];
    }
    Tensor avg(t.shape);
    for (std::size_t i = 0; i < acc.size(); ++i) avg.data[i] = static_cast<float>(acc[i]);
    out.emplace(name, std::move(avg));
  }
  return out;
}

double ClientUpdate::final_epoch_loss() const {
  if (trace.empty()) return 0.0;
  const int last = trace.back().epoch;
  double sum = 0;
  int n = 0;
  for (const auto& r : trace)
    if (r.epoch == last) sum += r.loss, ++n;
  return sum / n;
}

std::vector<int> RoundResult::selected() const {
  std::vector<int> ids;
  for (const auto& c : clients) ids.push_back(c.client_id);
  return ids;
}

double RoundResult::mean_final_epoch_loss() const {
  if (clients.empty()) return 0.0;
  double sum = 0;
  for (const auto& c : clients) sum += c.final_epoch_loss();
  return sum / clients.size();
}

std::size_t RoundResult::batch_count() const {
  std::size_t n = 0;
  for (const auto& c : clients) n += c.trace.size();
  return n;
}

std::size_t PretrainResult::batch_count() const {
  std::size_t n = 0;
  for (const auto& r : rounds) n += r.batch_count();
  return n;
}

NamedTensors initial_weights(const PretrainConfig& cfg) {
  return EncoderModel::build(cfg.encoder, derive_seed(cfg.seed, {hash_name("init")})).state();
}

PretrainResult run_pretraining(const PretrainConfig& cfg, const std::vector<ClientShard>& clients,
                               const Dataset& images, const Dataset& audio, const RoundCallback& on_round,
                               const NamedTensors* start) {
  cfg.validate();
  if (clients.empty()) throw ContractError("run_pretraining: no clients");
  for (std::size_t i = 0; i < clients.size(); ++i)
    if (clients[i].client_id != static_cast<int>(i))
      throw ContractError("run_pretraining: client at position " + std::to_string(i) + " has id " +
                          std::to_string(clients[i].client_id));
  PretrainResult res;
  res.initial = start ? *start : initial_weights(cfg);
  {
    // Reject a start state that does not fit the architecture before any work.
    EncoderModel probe = EncoderModel::build(cfg.encoder, 0);
    probe.load_state(res.initial);
  }
  NamedTensors global = res.initial;
  const int K = static_cast<int>(clients.size());
  std::int64_t batches = 0;

  for (int r = 1; r <= cfg.federation.rounds; ++r) {
    if (cfg.federation.batch_budget > 0 && batches >= cfg.federation.batch_budget) break;
    const auto t0 = std::chrono::steady_clock::now();
    RoundResult round;
    round.round = r;
    const auto ids = sample_clients(K, cfg.federation.participation_fraction, cfg.seed, r);
    const std::uint64_t round_seed = derive_seed(cfg.seed, {hash_name("round"), static_cast<std::uint64_t>(r)});
    std::vector<NamedTensors> local;
    std::vector<double> sizes;
    for (int id : ids) {
      const ClientShard& shard = clients[id];
      LocalResult lr;
      try {
        // Every client starts from its own copy of w_g^r.
        lr = local_train(cfg.encoder, global, shard, images, audio, cfg.ssl, cfg.featurize, round_seed);
      } catch (const DivergenceError& e) {
        throw DivergenceError("round " + std::to_string(r) + ": " + e.what());
      }
      ClientUpdate u;
      u.client_id = id;
      u.size = shard.size();
      u.trace = std::move(lr.trace);
      round.clients.push_back(std::move(u));
      local.push_back(std::move(lr.weights));
      sizes.push_back(static_cast<double>(shard.size()));
    }
    const auto beta = fedavg_coefficients(sizes);
    for (std::size_t q = 0; q < beta.size(); ++q) {
      round.clients[q].beta = beta[q];
      round.beta_sum += beta[q];
    }
    global = fedavg(local, sizes);
    round.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    batches += static_cast<std::int64_t>(round.batch_count());
    if (on_round) on_round(round, global);
    res.rounds.push_back(std::move(round));
  }
  res.final_weights = std::move(global);
  return res;
}

namespace {

std::vector<ClientShard> renumber(const std::vector<ClientShard>& clients, const std::vector<int>& ids) {
  std::vector<ClientShard> out;
  for (int id : ids) {
    ClientShard s = clients.at(id);
    s.client_id = static_cast<int>(out.size());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

ModelCombinationResult run_model_combination(const PretrainConfig& cfg, const std::vector<ClientShard>& clients,
                                             const Dataset& images, const Dataset& audio,
                                             const RoundCallback& on_image_round, const RoundCallback& on_audio_round) {
  ModelCombinationResult res;
  for (const auto& c : clients) {
    if (!c.image_indices.empty() && !c.audio_indices.empty())
      throw ContractError("run_model_combination: client " + std::to_string(c.client_id) +
                          " holds both modalities; the baseline needs a profile with both = 0");
    if (!c.image_indices.empty()) res.image_clients.push_back(c.client_id);
    if (!c.audio_indices.empty()) res.audio_clients.push_back(c.client_id);
  }
  if (res.image_clients.empty() || res.audio_clients.empty())
    throw ContractError("run_model_combination: need at least one image-only and one audio-only client");
  res.image_expert = run_pretraining(cfg, renumber(clients, res.image_clients), images, audio, on_image_round);
  res.audio_expert = run_pretraining(cfg, renumber(clients, res.audio_clients), images, audio, on_audio_round);
  return res;
}

}  // namespace fssuavl
