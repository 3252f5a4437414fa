#pragma once

// Whole-encoder gradient check: d(Σ w·encode(x))/d(param, x) from the library
// graph against central differences of the f64 reference encoder.

#include <random>
#include <vector>

#include "reference_encoder.hpp"

namespace fssuavl::ref {

struct EncoderGradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose ±h probes land in different linear regions of a
  // relu/max-pool. Central differences are not an oracle there.
  std::size_t straddling = 0;
  bool names_match = false;
};

inline EncoderGradCheck encoder_gradcheck(const EncoderConfig& cfg, bool train, std::uint64_t seed,
                                          std::int64_t batch = 3, double h = 1e-3) {
  auto model = EncoderModel::build(cfg, seed);
  const Tensor x = random_tensor({batch, cfg.in_channels, cfg.input_side, cfg.input_side}, seed + 1);
  RefParams p = ref_params(model.params());
  const RefParams b = ref_params(model.buffers());
  RT rx = RT::of(x);

  std::mt19937_64 rng(seed + 2);
  std::normal_distribution<double> nd;
  std::vector<double> w(static_cast<std::size_t>(batch * cfg.proj_dim));
  for (auto& v : w) v = nd(rng);
  std::vector<std::int64_t> branches;
  auto objective = [&] {
    branches.clear();
    branch_trace = &branches;
    const RT o = RefEncoder(cfg, p, b, train).encode(rx);
    branch_trace = nullptr;
    double s = 0;
    for (std::size_t i = 0; i < o.n(); ++i) s += w[i] * o.v[i];
    return s;
  };
  objective();
  const std::vector<std::int64_t> base = branches;

  Graph g;
  EncoderForward fwd(g, model, Trainable::yes, train);
  Var xv = g.variable(x);
  Var out = fwd.encode(xv);
  Tensor wt(out.shape());
  for (std::size_t i = 0; i < w.size(); ++i) wt.data[i] = static_cast<float>(w[i]);
  g.backward(ops::sum(ops::mul(out, g.constant(wt))));
  const NamedTensors grads = fwd.gradients();

  EncoderGradCheck res;
  res.names_match = grads.size() == p.size();
  auto probe = [&](std::vector<double>& vals, const Tensor& analytic) {
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double v0 = vals[j];
      vals[j] = v0 + h;
      const double fp = objective();
      const bool same_p = branches == base;
      vals[j] = v0 - h;
      const double fm = objective();
      const bool same_m = branches == base;
      vals[j] = v0;
      if (!same_p || !same_m) {
        ++res.straddling;
        continue;
      }
      res.max_rel_error = std::max(res.max_rel_error, rel_error(analytic.data[j], (fp - fm) / (2 * h)));
      ++res.checked;
    }
  };
  for (auto& [name, t] : p) {
    auto it = grads.find(name);
    if (it == grads.end()) {
      res.names_match = false;
      continue;
    }
    probe(t.v, it->second);
  }
  probe(rx.v, g.grad(xv));
  return res;
}

}  // namespace fssuavl::ref
