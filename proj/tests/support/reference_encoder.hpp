#pragma once

// f64 re-implementation of the encoder forward passes on top of the reference
// ops, reading parameters by name. Used as the finite-difference oracle for
// whole-encoder gradients.

#include <map>
#include <string>

#include "fssuavl/encoder.hpp"
#include "reference.hpp"

namespace fssuavl::ref {

using RefParams = std::map<std::string, RT>;

inline RefParams ref_params(const NamedTensors& t) {
  RefParams out;
  for (const auto& [k, v] : t) out.emplace(k, RT::of(v));
  return out;
}

class RefEncoder {
 public:
  RefEncoder(const EncoderConfig& c, const RefParams& p, const RefParams& buffers, bool train)
      : c_(c), p_(p), b_(buffers), train_(train) {}

  RT encode(const RT& x) const { return project(features(x)); }

  RT features(const RT& x) const { return c_.kind == EncoderKind::vit ? vit(x) : cnn(x); }

  RT project(const RT& f) const {
    RT h = relu(linear(f, p_.at("proj.fc1.weight"), &p_.at("proj.fc1.bias")));
    return linear(h, p_.at("proj.fc2.weight"), &p_.at("proj.fc2.bias"));
  }

 private:
  RT bn(const RT& x, const std::string& pre) const {
    return batch_norm(x, p_.at(pre + ".weight"), p_.at(pre + ".bias"), train_, &b_.at(pre + ".running_mean"),
                      &b_.at(pre + ".running_var"));
  }

  RT cnn(const RT& x) const {
    RT h = max_pool2d(relu(bn(conv2d(x, p_.at("stem.conv.weight"), 2, 3), "stem.bn")), 3, 2, 1);
    for (int s = 0; s < c_.depth; ++s)
      for (int b = 0; b < c_.blocks_per_stage; ++b) {
        const std::string pre = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
        const int stride = (b == 0 && s > 0) ? 2 : 1;
        RT y = relu(bn(conv2d(h, p_.at(pre + ".conv1.weight"), stride, 1), pre + ".bn1"));
        y = bn(conv2d(y, p_.at(pre + ".conv2.weight"), 1, 1), pre + ".bn2");
        RT skip = h;
        if (b == 0 && s > 0) skip = bn(conv2d(h, p_.at(pre + ".shortcut.conv.weight"), stride, 0), pre + ".shortcut.bn");
        h = relu(add(y, skip));
      }
    return global_avg_pool(h);
  }

  RT dense(const RT& t, const std::string& pre) const {
    RT flat = reshape(t, {t.d(0) * t.d(1), t.d(2)});
    RT y = linear(flat, p_.at(pre + ".weight"), &p_.at(pre + ".bias"));
    return reshape(y, {t.d(0), t.d(1), y.d(1)});
  }

  RT norm(const RT& t, const std::string& pre) const {
    return layer_norm(t, p_.at(pre + ".weight"), p_.at(pre + ".bias"));
  }

  RT vit(const RT& x) const {
    RT h = dense(patchify(x, c_.patch), "patch_embed");
    const RT& pos = p_.at("pos_embed");
    for (std::size_t i = 0; i < h.n(); ++i) h.v[i] += pos.v[i % pos.n()];
    for (int l = 0; l < c_.depth; ++l) {
      const std::string pre = "blocks." + std::to_string(l);
      RT n1 = norm(h, pre + ".ln1");
      RT a = attention(dense(n1, pre + ".attn.q"), dense(n1, pre + ".attn.k"), dense(n1, pre + ".attn.v"), c_.heads);
      h = add(h, dense(a, pre + ".attn.out"));
      RT n2 = norm(h, pre + ".ln2");
      h = add(h, dense(gelu(dense(n2, pre + ".mlp.fc1")), pre + ".mlp.fc2"));
    }
    return mean_axis(norm(h, "norm"), 1);
  }

  EncoderConfig c_;
  const RefParams& p_;
  const RefParams& b_;
  bool train_;
};

}  // namespace fssuavl::ref
