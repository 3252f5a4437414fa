#include "fssuavl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fssuavl/error.hpp"

namespace fssuavl {

float cosine_lr(std::int64_t step, std::int64_t total, float base) {
  if (total <= 0) throw ContractError("cosine_lr: total steps must be positive");
  step = std::clamp<std::int64_t>(step, 0, total);
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
  return static_cast<float>(base * 0.5 * (1.0 + std::cos(phase)));
}

float Sgd::current_lr() const {
  if (config_.total_steps <= 0) {
    float lr = config_.base_lr;
    for (auto m : config_.milestones)
      if (step_ >= m) lr *= config_.gamma;
    return lr;
  }
  return cosine_lr(step_, config_.total_steps, config_.base_lr);
}

void Sgd::step(NamedTensors& params, const NamedTensors& grads) {
  const float lr = current_lr();
  const float m = config_.momentum, wd = config_.weight_decay;
  for (auto& [name, w] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (g.shape != w.shape)
      throw DimensionError("sgd: gradient " + shape_str(g.shape) + " for parameter '" + name + "' " +
                           shape_str(w.shape));
    auto [vit, fresh] = velocity_.try_emplace(name, Tensor::zeros(w.shape));
    auto& v = vit->second.data;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      v[i] = m * v[i] + g.data[i] + wd * w.data[i];
      w.data[i] -= lr * v[i];
    }
  }
  ++step_;
}

}  // namespace fssuavl
