#pragma once

// nlohmann::json conversions for the config structs. Private to the library:
// nlohmann is not part of the public interface.

#include <charconv>
#include <cstdlib>
#include <nlohmann/json.hpp>

#include "fssuavl/encoder.hpp"
#include "fssuavl/eval.hpp"
#include "fssuavl/modality.hpp"
#include "fssuavl/orchestrator.hpp"
#include "fssuavl/partition.hpp"
#include "fssuavl/ssl.hpp"

namespace fssuavl {

using json = nlohmann::json;

// Shortest decimal form of a float, stored as a double: 0.03f prints as 0.03
// and still reads back to the same float.
inline json f32(float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  *end = '\0';
  return std::strtod(buf, nullptr);
}

inline void to_json(json& j, const EncoderConfig& c) {
  j = {{"kind", to_string(c.kind)}, {"width", c.width},     {"depth", c.depth},
       {"blocks_per_stage", c.blocks_per_stage}, {"heads", c.heads}, {"patch", c.patch},
       {"mlp_ratio", c.mlp_ratio}, {"proj_dim", c.proj_dim}, {"input_side", c.input_side},
       {"in_channels", c.in_channels}};
}
inline void from_json(const json& j, EncoderConfig& c) {
  c.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  j.at("width").get_to(c.width);
  j.at("depth").get_to(c.depth);
  j.at("blocks_per_stage").get_to(c.blocks_per_stage);
  j.at("heads").get_to(c.heads);
  j.at("patch").get_to(c.patch);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("proj_dim").get_to(c.proj_dim);
  j.at("input_side").get_to(c.input_side);
  j.at("in_channels").get_to(c.in_channels);
}

inline void to_json(json& j, const SslConfig& c) {
  j = {{"loss", to_string(c.loss)},       {"tau", f32(c.tau)},
       {"bt_lambda", f32(c.bt_lambda)},   {"batch_size", c.batch_size},
       {"local_epochs", c.local_epochs},  {"lr", f32(c.lr)},
       {"weight_decay", f32(c.weight_decay)}, {"momentum", f32(c.momentum)}};
}
inline void from_json(const json& j, SslConfig& c) {
  c.loss = ssl_loss_from_string(j.at("loss").get<std::string>());
  j.at("tau").get_to(c.tau);
  j.at("bt_lambda").get_to(c.bt_lambda);
  j.at("batch_size").get_to(c.batch_size);
  j.at("local_epochs").get_to(c.local_epochs);
  j.at("lr").get_to(c.lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("momentum").get_to(c.momentum);
}

inline void to_json(json& j, const FeaturizeConfig& c) {
  j = {{"side", c.side},
       {"augment", c.augment},
       {"crop_scale_min", c.crop_scale_min},
       {"crop_scale_max", c.crop_scale_max},
       {"crop_ratio_min", c.crop_ratio_min},
       {"crop_ratio_max", c.crop_ratio_max},
       {"flip_prob", c.flip_prob},
       {"brightness", c.brightness},
       {"contrast", c.contrast},
       {"sample_rate", c.sample_rate},
       {"crop_seconds", c.crop_seconds},
       {"n_fft", c.n_fft},
       {"hop", c.hop},
       {"max_time_mask", c.max_time_mask},
       {"max_freq_mask", c.max_freq_mask}};
}
inline void from_json(const json& j, FeaturizeConfig& c) {
  j.at("side").get_to(c.side);
  j.at("augment").get_to(c.augment);
  j.at("crop_scale_min").get_to(c.crop_scale_min);
  j.at("crop_scale_max").get_to(c.crop_scale_max);
  j.at("crop_ratio_min").get_to(c.crop_ratio_min);
  j.at("crop_ratio_max").get_to(c.crop_ratio_max);
  j.at("flip_prob").get_to(c.flip_prob);
  j.at("brightness").get_to(c.brightness);
  j.at("contrast").get_to(c.contrast);
  j.at("sample_rate").get_to(c.sample_rate);
  j.at("crop_seconds").get_to(c.crop_seconds);
  j.at("n_fft").get_to(c.n_fft);
  j.at("hop").get_to(c.hop);
  j.at("max_time_mask").get_to(c.max_time_mask);
  j.at("max_freq_mask").get_to(c.max_freq_mask);
}

inline void to_json(json& j, const PartitionConfig& c) {
  j = {{"n_clients", c.n_clients},
       {"alpha", c.alpha},
       {"seed", c.seed},
       {"profile",
        {{"audio_only", c.profile.audio_only}, {"image_only", c.profile.image_only}, {"both", c.profile.both}}}};
}
inline void from_json(const json& j, PartitionConfig& c) {
  j.at("n_clients").get_to(c.n_clients);
  j.at("alpha").get_to(c.alpha);
  j.at("seed").get_to(c.seed);
  j.at("profile").at("audio_only").get_to(c.profile.audio_only);
  j.at("profile").at("image_only").get_to(c.profile.image_only);
  j.at("profile").at("both").get_to(c.profile.both);
}

inline void to_json(json& j, const FederationConfig& c) {
  j = {{"participation_fraction", c.participation_fraction},
       {"rounds", c.rounds},
       {"checkpoint_every", c.checkpoint_every},
       {"batch_budget", c.batch_budget}};
}
inline void from_json(const json& j, FederationConfig& c) {
  j.at("participation_fraction").get_to(c.participation_fraction);
  j.at("rounds").get_to(c.rounds);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("batch_budget").get_to(c.batch_budget);
}

inline void to_json(json& j, const EvalConfig& c) {
  j = {{"k", c.k},
       {"t", f32(c.t)},
       {"probe_epochs", c.probe_epochs},
       {"probe_lr", f32(c.probe_lr)},
       {"probe_batch", c.probe_batch},
       {"probe_momentum", f32(c.probe_momentum)},
       {"probe_weight_decay", f32(c.probe_weight_decay)},
       {"seed", c.seed}};
}
inline void from_json(const json& j, EvalConfig& c) {
  j.at("k").get_to(c.k);
  j.at("t").get_to(c.t);
  j.at("probe_epochs").get_to(c.probe_epochs);
  j.at("probe_lr").get_to(c.probe_lr);
  j.at("probe_batch").get_to(c.probe_batch);
  j.at("probe_momentum").get_to(c.probe_momentum);
  j.at("probe_weight_decay").get_to(c.probe_weight_decay);
  j.at("seed").get_to(c.seed);
}

}  // namespace fssuavl
