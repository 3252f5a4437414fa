#pragma once

#include <cstdint>
#include <vector>

#include "fssuavl/tensor.hpp"

namespace fssuavl {

// base · ½(1 + cos(π·step/total)); step is clamped to [0, total].
float cosine_lr(std::int64_t step, std::int64_t total, float base);

struct SgdConfig {
  float base_lr = 0.03f;
  float weight_decay = 1e-4f;
  float momentum = 0.9f;
  // Steps of the cosine schedule; 0 keeps the rate constant at base_lr.
  std::int64_t total_steps = 0;
  // Step decay, used when total_steps is 0: lr = base · gamma^(milestones passed).
  std::vector<std::int64_t> milestones;
  float gamma = 0.1f;
};

// SGD with momentum and coupled weight decay:
//   v <- m·v + g + wd·w ;  w <- w - lr(step)·v
// Momentum buffers are created on first use, zero-initialized.
class Sgd {
 public:
  explicit Sgd(SgdConfig config) : config_(config) {}

  // Updates every tensor in `params` that has an entry in `grads`. Parameters
  // without a gradient are left untouched.
  void step(NamedTensors& params, const NamedTensors& grads);

  float current_lr() const;
  std::int64_t steps_taken() const { return step_; }
  const SgdConfig& config() const { return config_; }
  const NamedTensors& momentum_buffers() const { return velocity_; }

 private:
  SgdConfig config_;
  NamedTensors velocity_;
  std::int64_t step_ = 0;
};

}  // namespace fssuavl
