#pragma once

#include <cstdint>
#include <string>

#include "fssuavl/autodiff.hpp"
#include "fssuavl/tensor.hpp"

namespace fssuavl {

enum class EncoderKind { cnn_residual, vit };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::cnn_residual;
  int width = 16;           // cnn: stem/first-stage channels; vit: embedding dim
  int depth = 4;            // cnn: residual stages; vit: transformer layers
  int blocks_per_stage = 1; // cnn only
  int heads = 4;            // vit only
  int patch = 16;           // vit only
  int mlp_ratio = 2;        // vit only: hidden = mlp_ratio * width
  int proj_dim = 128;
  int input_side = 128;
  int in_channels = 1;

  // Throws ConfigError naming every offending field.
  void validate() const;

  // ResNet-18 layout: 64 base channels, 4 stages of 2 basic blocks.
  static EncoderConfig resnet18();
  // 18 layers, 8 heads, 16×16 patches.
  static EncoderConfig vit_large();
  static EncoderConfig vit_small();

  bool operator==(const EncoderConfig&) const = default;
};

// A shared encoder f(·): backbone + 2-layer projection head. Parameters and
// running buffers are stored by stable names so two models built from the same
// config can be averaged name-wise.
class EncoderModel {
 public:
  EncoderModel() = default;

  // Deterministic in (config, seed): every tensor is drawn from its own stream
  // keyed by (seed, name).
  static EncoderModel build(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  NamedTensors& params() { return params_; }
  const NamedTensors& params() const { return params_; }
  NamedTensors& buffers() { return buffers_; }
  const NamedTensors& buffers() const { return buffers_; }

  // Parameters and buffers in one map (names never collide).
  NamedTensors state() const;
  // Replaces every tensor; the name set and shapes must match exactly.
  void load_state(const NamedTensors& state);

  std::size_t parameter_count() const;
  int feature_dim() const;
  // ViT only: (input_side / patch)^2.
  int token_count() const;

  bool operator==(const EncoderModel&) const = default;

 private:
  EncoderConfig config_;
  NamedTensors params_;
  NamedTensors buffers_;
};

enum class Trainable { yes, no };

// One forward pass of an EncoderModel inside a Graph. Parameters are bound as
// graph variables when trainable (as constants otherwise). In train mode the
// batch-norm running buffers of the model are updated.
class EncoderForward {
 public:
  EncoderForward(Graph& graph, EncoderModel& model, Trainable trainable, bool train_mode);

  // x[B×C×S×S] -> backbone features [B×feature_dim]
  Var features(Var x);
  // features -> projection [B×proj_dim]
  Var project(Var features);
  Var encode(Var x) { return project(features(x)); }

  // d(loss)/d(param) for every parameter bound so far. Call after backward().
  NamedTensors gradients() const;

 private:
  Var param(const std::string& name);
  Var bn(Var x, const std::string& prefix);
  Var cnn_features(Var x);
  Var vit_features(Var x);

  Graph& graph_;
  EncoderModel& model_;
  Trainable trainable_;
  bool train_mode_;
  std::map<std::string, Var> bound_;
};

// Eval-path helpers on plain tensors (no gradients). `train_mode` = true
// updates the running buffers exactly as a training forward would.
Tensor encode(EncoderModel& model, const Tensor& batch, bool train_mode);
Tensor encode(const EncoderModel& model, const Tensor& batch);
Tensor features(const EncoderModel& model, const Tensor& batch);

// Backbone plus a task-specific linear layer. With freeze_backbone the
// backbone is evaluated in eval mode and never receives gradients.
struct Classifier {
  EncoderModel backbone;
  Tensor head_weight;  // [num_classes×feature_dim]
  Tensor head_bias;    // [num_classes]
  bool freeze_backbone = true;

  int num_classes() const { return static_cast<int>(head_bias.numel()); }
};

Classifier attach_head(EncoderModel backbone, int num_classes, std::uint64_t seed, bool freeze_backbone);

// Logits [B×num_classes] without gradients (backbone in eval mode).
Tensor classifier_logits(const Classifier& clf, const Tensor& batch);
// Logits from precomputed backbone features [B×feature_dim].
Tensor head_logits(const Classifier& clf, const Tensor& features);

}  // namespace fssuavl
