#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fssuavl/encoder.hpp"
#include "fssuavl/modality.hpp"
#include "fssuavl/partition.hpp"
#include "fssuavl/ssl.hpp"

namespace fssuavl {

struct FederationConfig {
  double participation_fraction = 0.1;
  int rounds = 100;
  // Checkpoint cadence in rounds for callers that persist state; 0 = final only.
  int checkpoint_every = 10;
  // When > 0, training stops after the first round at which the cumulative
  // number of local batches reaches this budget (`rounds` stays the cap).
  std::int64_t batch_budget = 0;

  void validate() const;
  bool operator==(const FederationConfig&) const = default;
};

// Q = max(1, round(fraction·K)).
int selected_count(double fraction, int n_clients);

// Uniform sample without replacement of selected_count() client positions,
// returned ascending. Deterministic in (seed, round).
std::vector<int> sample_clients(int n_clients, double fraction, std::uint64_t seed, int round);

// β_q = d_q / Σd, accumulated in double.
std::vector<double> fedavg_coefficients(const std::vector<double>& sizes);

// Name-wise weighted mean of the models (parameters and running buffers alike).
// Accumulates in double in model order. Throws AggregationError naming the
// first tensor whose name or shape disagrees.
NamedTensors fedavg(const std::vector<NamedTensors>& models, const std::vector<double>& sizes);

struct ClientUpdate {
  int client_id = 0;
  std::size_t size = 0;  // d_q: images + audio on the client
  double beta = 0.0;
  std::vector<BatchRecord> trace;

  // Mean loss over the batches of the last local epoch.
  double final_epoch_loss() const;
};

struct RoundResult {
  int round = 0;  // 1-based
  std::vector<ClientUpdate> clients;
  double beta_sum = 0.0;
  double seconds = 0.0;

  std::vector<int> selected() const;
  double mean_final_epoch_loss() const;
  std::size_t batch_count() const;
};

struct PretrainConfig {
  EncoderConfig encoder;
  SslConfig ssl;
  FeaturizeConfig featurize;
  FederationConfig federation;
  std::uint64_t seed = 0;

  void validate() const;
};

// Called after every round with the freshly aggregated global weights.
using RoundCallback = std::function<void(const RoundResult&, const NamedTensors& global)>;

struct PretrainResult {
  NamedTensors initial;
  NamedTensors final_weights;
  std::vector<RoundResult> rounds;

  std::size_t batch_count() const;
};

// Initial global weights: EncoderModel::build(encoder, derive_seed(seed, "init")).
NamedTensors initial_weights(const PretrainConfig& cfg);

// For r = 1..R: sample, broadcast w_g^r, local_train on each selected client in
// ascending id order, fedavg with β_q ∝ d_q. `clients[i]` must have client_id i.
// A DivergenceError from any client stops the run (annotated with the round).
// `start` overrides the initial weights (for resuming).
PretrainResult run_pretraining(const PretrainConfig& cfg, const std::vector<ClientShard>& clients,
                               const Dataset& images, const Dataset& audio, const RoundCallback& on_round = {},
                               const NamedTensors* start = nullptr);

struct ModelCombinationResult {
  PretrainResult image_expert;
  PretrainResult audio_expert;
  std::vector<int> image_clients;  // ids in the original partition
  std::vector<int> audio_clients;
};

// Two independent federations over the unimodal clients of `clients`: image-only
// clients train the image expert, audio-only clients the audio expert. Each
// federation uses the same fraction, rounds and local epochs. Clients holding
// both modalities are rejected.
ModelCombinationResult run_model_combination(const PretrainConfig& cfg, const std::vector<ClientShard>& clients,
                                             const Dataset& images, const Dataset& audio,
                                             const RoundCallback& on_image_round = {},
                                             const RoundCallback& on_audio_round = {});

}  // namespace fssuavl
