#include "fssuavl/ssl.hpp"

#include <cmath>

#include "fssuavl/error.hpp"
#include "fssuavl/optim.hpp"

namespace fssuavl {

std::string to_string(SslLoss l) { return l == SslLoss::nt_xent ? "nt_xent" : "barlow_twins"; }

SslLoss ssl_loss_from_string(const std::string& s) {
  if (s == "nt_xent") return SslLoss::nt_xent;
  if (s == "barlow_twins") return SslLoss::barlow_twins;
  throw ConfigError("ssl.loss: unknown loss '" + s + "'");
}

void SslConfig::validate() const {
  std::vector<std::string> bad;
  if (!(tau > 0)) bad.push_back("tau must be > 0");
  if (!(bt_lambda >= 0)) bad.push_back("bt_lambda must be >= 0");
  if (batch_size < 2) bad.push_back("batch_size must be >= 2");
  if (local_epochs < 0) bad.push_back("local_epochs must be >= 0");
  if (!(lr > 0)) bad.push_back("lr must be > 0");
  if (!(weight_decay >= 0)) bad.push_back("weight_decay must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) bad.push_back("momentum must be in [0, 1)");
  if (bad.empty()) return;
  std::string msg = "invalid ssl config:";
  for (const auto& b : bad) msg += " ssl." + b + ";";
  throw ConfigError(msg);
}

Var nt_xent_loss(Var embeddings, float tau) {
  if (embeddings.shape().size() != 2) throw DimensionError("nt_xent_loss: expected [2B×D], got " + shape_str(embeddings.shape()));
  const std::int64_t N = embeddings.dim(0);
  if (N % 2 != 0) throw DimensionError("nt_xent_loss: row count " + std::to_string(N) + " is odd");
  if (N < 4) throw ContractError("nt_xent_loss: need B >= 2 pairs so that negatives exist");
  if (!(tau > 0)) throw ContractError("nt_xent_loss: tau must be > 0");
  Var z = ops::l2_normalize(embeddings);
  Var sim = ops::scale(ops::matmul(z, ops::transpose(z, 0, 1)), 1.0f / tau);
  std::vector<int> targets(N);
  std::vector<std::uint8_t> self(static_cast<std::size_t>(N * N), 0);
  for (std::int64_t i = 0; i < N; ++i) {
    targets[i] = static_cast<int>(i ^ 1);
    self[i * N + i] = 1;
  }
  return ops::cross_entropy(sim, targets, self);
}

Var barlow_twins_loss(Var za, Var zb, float lambda) {
  if (za.shape() != zb.shape() || za.shape().size() != 2)
    throw DimensionError("barlow_twins_loss: views " + shape_str(za.shape()) + " and " + shape_str(zb.shape()));
  const std::int64_t B = za.dim(0), D = za.dim(1);
  if (B < 2) throw ContractError("barlow_twins_loss: batch must have at least 2 rows");
  Graph& g = za.graph();
  constexpr float kEps = 1e-6f;
  Var c = ops::scale(ops::matmul(ops::transpose(ops::standardize_columns(za, kEps), 0, 1),
                                 ops::standardize_columns(zb, kEps)),
                     1.0f / static_cast<float>(B));
  Tensor eye({D, D}), weight = Tensor::full({D, D}, lambda);
  for (std::int64_t i = 0; i < D; ++i) {
    eye.data[i * D + i] = 1.0f;
    weight.data[i * D + i] = 1.0f;
  }
  Var diff = ops::sub(c, g.constant(std::move(eye)));
  return ops::sum(ops::mul(ops::mul(diff, diff), g.constant(std::move(weight))));
}

BatchSchedule make_schedule(std::size_t n_images, std::size_t n_audio, int batch_size, Rng& rng) {
  if (n_images == 0 && n_audio == 0) throw ContractError("make_schedule: client has no images and no audio");
  if (batch_size < 2) throw ContractError("make_schedule: batch_size must be >= 2");
  BatchSchedule out;
  for (Modality m : {Modality::image, Modality::audio}) {
    const std::size_t n = m == Modality::image ? n_images : n_audio;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t at = 0; at < n; at += batch_size) {
      const std::size_t end = std::min(n, at + batch_size);
      if (end - at < 2) break;
      out.push_back({m, {order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(end)}});
    }
  }
  rng.shuffle(out);
  return out;
}

BatchViews featurize_batch(const Dataset& d, const std::vector<std::size_t>& indices, const FeaturizeConfig& featurize,
                           std::uint64_t seed, bool interleave) {
  const auto B = static_cast<std::int64_t>(indices.size());
  const std::int64_t S = featurize.side;
  const std::size_t per = static_cast<std::size_t>(S * S);
  BatchViews out;
  if (interleave)
    out.interleaved = Tensor({2 * B, 1, S, S});
  else
    out.views_a = out.views_b = Tensor({B, 1, S, S});
  for (std::int64_t i = 0; i < B; ++i) {
    // Each sample's views depend only on (seed, sample index).
    Rng rng(derive_seed(seed, {indices[i]}));
    const ViewPair p = d.modality == Modality::image ? image_views(d.images.at(indices[i]), featurize, rng)
                                                     : audio_views(d.audio.at(indices[i]), featurize, rng);
    if (interleave) {
      std::copy(p.view_a.data.begin(), p.view_a.data.end(), out.interleaved.data.begin() + (2 * i) * per);
      std::copy(p.view_b.data.begin(), p.view_b.data.end(), out.interleaved.data.begin() + (2 * i + 1) * per);
    } else {
      std::copy(p.view_a.data.begin(), p.view_a.data.end(), out.views_a.data.begin() + i * per);
      std::copy(p.view_b.data.begin(), p.view_b.data.end(), out.views_b.data.begin() + i * per);
    }
  }
  return out;
}

LocalResult local_train(const EncoderConfig& encoder, const NamedTensors& weights_in, const ClientShard& client,
                        const Dataset& images, const Dataset& audio, const SslConfig& cfg,
                        const FeaturizeConfig& featurize, std::uint64_t round_seed) {
  cfg.validate();
  if (client.size() == 0) throw ContractError("local_train: client " + std::to_string(client.client_id) + " is empty");
  if (encoder.input_side != featurize.side)
    throw ConfigError("local_train: encoder input_side " + std::to_string(encoder.input_side) +
                      " differs from featurize side " + std::to_string(featurize.side));
  EncoderModel model = EncoderModel::build(encoder, 0);
  model.load_state(weights_in);
  LocalResult res;
  if (cfg.local_epochs == 0) {
    res.weights = model.state();
    return res;
  }

  const std::uint64_t client_seed = derive_seed(round_seed, {static_cast<std::uint64_t>(client.client_id)});
  std::vector<BatchSchedule> epochs;
  std::int64_t total = 0;
  for (int e = 0; e < cfg.local_epochs; ++e) {
    Rng rng(derive_seed(client_seed, {0x5C4ED, static_cast<std::uint64_t>(e)}));
    epochs.push_back(make_schedule(client.image_indices.size(), client.audio_indices.size(), cfg.batch_size, rng));
    total += static_cast<std::int64_t>(epochs.back().size());
  }
  SgdConfig sc;
  sc.base_lr = cfg.lr;
  sc.weight_decay = cfg.weight_decay;
  sc.momentum = cfg.momentum;
  sc.total_steps = total;
  Sgd sgd(sc);

  for (int e = 0; e < cfg.local_epochs; ++e) {
    for (std::size_t b = 0; b < epochs[e].size(); ++b) {
      const ScheduledBatch& batch = epochs[e][b];
      const bool is_image = batch.modality == Modality::image;
      const auto& local = is_image ? client.image_indices : client.audio_indices;
      std::vector<std::size_t> idx;
      for (auto p : batch.positions) idx.push_back(local.at(p));
      const std::uint64_t view_seed =
          derive_seed(client_seed, {static_cast<std::uint64_t>(e), is_image ? 0u : 1u});
      const bool interleave = cfg.loss == SslLoss::nt_xent;
      const BatchViews views = featurize_batch(is_image ? images : audio, idx, featurize, view_seed, interleave);

      Graph g;
      EncoderForward fwd(g, model, Trainable::yes, true);
      Var loss = interleave ? nt_xent_loss(fwd.encode(g.constant(views.interleaved)), cfg.tau)
                            : barlow_twins_loss(fwd.encode(g.constant(views.views_a)),
                                                fwd.encode(g.constant(views.views_b)), cfg.bt_lambda);
      const float value = loss.value().data[0];
      if (!std::isfinite(value))
        throw DivergenceError("local_train: client " + std::to_string(client.client_id) + " produced a non-finite loss at epoch " +
                              std::to_string(e) + " batch " + std::to_string(b) + " (" + to_string(batch.modality) +
                              ")");
      g.backward(loss);
      BatchRecord rec;
      rec.epoch = e;
      rec.batch = static_cast<int>(b);
      rec.modality = batch.modality;
      rec.size = static_cast<int>(idx.size());
      rec.lr = sgd.current_lr();
      rec.loss = value;
      sgd.step(model.params(), fwd.gradients());
      res.trace.push_back(rec);
    }
  }
  res.weights = model.state();
  return res;
}

}  // namespace fssuavl
