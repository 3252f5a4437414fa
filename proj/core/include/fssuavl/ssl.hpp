#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fssuavl/autodiff.hpp"
#include "fssuavl/encoder.hpp"
#include "fssuavl/modality.hpp"
#include "fssuavl/partition.hpp"

namespace fssuavl {

enum class SslLoss { nt_xent, barlow_twins };

std::string to_string(SslLoss l);
SslLoss ssl_loss_from_string(const std::string& s);

struct SslConfig {
  SslLoss loss = SslLoss::nt_xent;
  float tau = 0.5f;
  float bt_lambda = 5e-3f;
  int batch_size = 32;
  int local_epochs = 5;
  float lr = 0.03f;
  float weight_decay = 1e-4f;
  float momentum = 0.9f;

  void validate() const;
  bool operator==(const SslConfig&) const = default;
};

// NT-Xent over 2B embeddings whose rows 2i and 2i+1 are the two views of one
// sample. Rows are l2-normalized internally; the loss is the mean over all 2B
// anchors of -log softmax over the 2B-1 other rows at the partner row.
Var nt_xent_loss(Var embeddings, float tau);

// Σ_i (1 - C_ii)² + λ Σ_{i≠j} C_ij² with C = ẑAᵀẑB / B, where ẑ is the
// per-column standardization over the batch (std clamped at 1e-6).
Var barlow_twins_loss(Var za, Var zb, float lambda);

struct ScheduledBatch {
  Modality modality = Modality::image;
  std::vector<std::size_t> positions;  // into the client's per-modality index list

  bool operator==(const ScheduledBatch&) const = default;
};
using BatchSchedule = std::vector<ScheduledBatch>;

// One epoch: per-modality shuffles and batching (a final short batch is kept
// when it has at least 2 samples), then a shuffle of the batch order.
BatchSchedule make_schedule(std::size_t n_images, std::size_t n_audio, int batch_size, Rng& rng);

struct BatchRecord {
  int epoch = 0;
  int batch = 0;
  Modality modality = Modality::image;
  int size = 0;
  float lr = 0.0f;
  float loss = 0.0f;
};

struct LocalResult {
  NamedTensors weights;  // parameters and running buffers
  std::vector<BatchRecord> trace;
};

// The client update: E epochs of the schedule starting from `weights_in`,
// featurizing two views per sample, encoding, loss, backward, SGD step. The
// learning rate follows a cosine decay over this call's E·batches steps.
// Deterministic in (weights_in, client, cfg, round_seed).
LocalResult local_train(const EncoderConfig& encoder, const NamedTensors& weights_in, const ClientShard& client,
                        const Dataset& images, const Dataset& audio, const SslConfig& cfg,
                        const FeaturizeConfig& featurize, std::uint64_t round_seed);

// Stacks the views for one batch: interleaved [2B×1×S×S] for NT-Xent
// (rows 2i, 2i+1 are a pair), or the two view stacks for Barlow Twins.
struct BatchViews {
  Tensor interleaved;
  Tensor views_a;
  Tensor views_b;
};
BatchViews featurize_batch(const Dataset& d, const std::vector<std::size_t>& indices, const FeaturizeConfig& featurize,
                           std::uint64_t seed, bool interleave);

}  // namespace fssuavl
