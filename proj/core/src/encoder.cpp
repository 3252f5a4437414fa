#include "fssuavl/encoder.hpp"

#include <cmath>

#include "fssuavl/error.hpp"
#include "fssuavl/rng.hpp"

namespace fssuavl {

std::string to_string(EncoderKind kind) { return kind == EncoderKind::vit ? "vit" : "cnn_residual"; }

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "cnn_residual" || s == "cnn") return EncoderKind::cnn_residual;
  if (s == "vit") return EncoderKind::vit;
  throw ConfigError("encoder.kind: unknown encoder kind '" + s + "'");
}

void EncoderConfig::validate() const {
  std::vector<std::string> bad;
  if (width < 1) bad.push_back("width must be >= 1");
  if (depth < 1) bad.push_back("depth must be >= 1");
  if (proj_dim < 2) bad.push_back("proj_dim must be >= 2");
  if (input_side < 1) bad.push_back("input_side must be >= 1");
  if (in_channels != 1 && in_channels != 3) bad.push_back("in_channels must be 1 or 3");
  if (kind == EncoderKind::cnn_residual) {
    if (blocks_per_stage < 1) bad.push_back("blocks_per_stage must be >= 1");
  } else {
    if (patch < 1 || input_side % patch != 0) bad.push_back("patch must divide input_side");
    if (heads < 1 || width % heads != 0) bad.push_back("heads must divide width");
    if (mlp_ratio < 1) bad.push_back("mlp_ratio must be >= 1");
  }
  if (bad.empty()) return;
  std::string msg = "invalid encoder config:";
  for (const auto& b : bad) msg += " encoder." + b + ";";
  throw ConfigError(msg);
}

EncoderConfig EncoderConfig::resnet18() {
  EncoderConfig c;
  c.width = 64;
  c.depth = 4;
  c.blocks_per_stage = 2;
  return c;
}

EncoderConfig EncoderConfig::vit_large() {
  EncoderConfig c;
  c.kind = EncoderKind::vit;
  c.width = 256;
  c.depth = 18;
  c.heads = 8;
  c.patch = 16;
  c.mlp_ratio = 4;
  return c;
}

EncoderConfig EncoderConfig::vit_small() {
  EncoderConfig c;
  c.kind = EncoderKind::vit;
  c.width = 64;
  c.depth = 4;
  c.heads = 4;
  c.patch = 16;
  return c;
}

namespace {

class Initializer {
 public:
  Initializer(std::uint64_t seed, NamedTensors& params, NamedTensors& buffers)
      : seed_(seed), params_(params), buffers_(buffers) {}

  // U(-b, b) with b = sqrt(3 / fan_in): unit-variance preserving fan-in scaling.
  void fan_in(const std::string& name, Shape shape, std::int64_t fan) {
    uniform(name, std::move(shape), std::sqrt(3.0 / static_cast<double>(fan)));
  }
  void uniform(const std::string& name, Shape shape, double bound) {
    Tensor t(std::move(shape));
    Rng rng(derive_seed(seed_, {hash_name(name)}));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
    params_[name] = std::move(t);
  }
  void constant(const std::string& name, Shape shape, float value) {
    params_[name] = Tensor::full(std::move(shape), value);
  }
  void norm(const std::string& prefix, std::int64_t channels) {
    constant(prefix + ".weight", {channels}, 1.0f);
    constant(prefix + ".bias", {channels}, 0.0f);
  }
  void batch_norm(const std::string& prefix, std::int64_t channels) {
    norm(prefix, channels);
    buffers_[prefix + ".running_mean"] = Tensor::zeros({channels});
    buffers_[prefix + ".running_var"] = Tensor::full({channels}, 1.0f);
  }
  void conv(const std::string& prefix, std::int64_t out, std::int64_t in, std::int64_t k) {
    fan_in(prefix + ".weight", {out, in, k, k}, in * k * k);
  }
  void linear(const std::string& prefix, std::int64_t out, std::int64_t in) {
    fan_in(prefix + ".weight", {out, in}, in);
    constant(prefix + ".bias", {out}, 0.0f);
  }

 private:
  std::uint64_t seed_;
  NamedTensors& params_;
  NamedTensors& buffers_;
};

int stage_channels(const EncoderConfig& c, int stage) { return c.width << stage; }

std::string block_prefix(int stage, int block) {
  return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(block);
}

bool has_shortcut(int stage, int block) {
  return block == 0 && stage > 0;  // channel doubling + stride 2
}

}  // namespace

EncoderModel EncoderModel::build(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderModel m;
  m.config_ = config;
  Initializer init(seed, m.params_, m.buffers_);
  if (config.kind == EncoderKind::cnn_residual) {
    init.conv("stem.conv", config.width, config.in_channels, 7);
    init.batch_norm("stem.bn", config.width);
    int cin = config.width;
    for (int s = 0; s < config.depth; ++s) {
      const int c = stage_channels(config, s);
      for (int b = 0; b < config.blocks_per_stage; ++b) {
        const std::string p = block_prefix(s, b);
        init.conv(p + ".conv1", c, cin, 3);
        init.batch_norm(p + ".bn1", c);
        init.conv(p + ".conv2", c, c, 3);
        init.batch_norm(p + ".bn2", c);
        if (has_shortcut(s, b)) {
          init.conv(p + ".shortcut.conv", c, cin, 1);
          init.batch_norm(p + ".shortcut.bn", c);
        }
        cin = c;
      }
    }
  } else {
    const int D = config.width, T = m.token_count();
    init.linear("patch_embed", D, static_cast<std::int64_t>(config.in_channels) * config.patch * config.patch);
    init.uniform("pos_embed", {T, D}, 0.02);
    for (int l = 0; l < config.depth; ++l) {
      const std::string p = "blocks." + std::to_string(l);
      init.norm(p + ".ln1", D);
      init.linear(p + ".attn.q", D, D);
      init.linear(p + ".attn.k", D, D);
      init.linear(p + ".attn.v", D, D);
      init.linear(p + ".attn.out", D, D);
      init.norm(p + ".ln2", D);
      init.linear(p + ".mlp.fc1", static_cast<std::int64_t>(D) * config.mlp_ratio, D);
      init.linear(p + ".mlp.fc2", D, static_cast<std::int64_t>(D) * config.mlp_ratio);
    }
    init.norm("norm", D);
  }
  const int F = m.feature_dim();
  init.linear("proj.fc1", F, F);
  init.linear("proj.fc2", config.proj_dim, F);
  return m;
}

NamedTensors EncoderModel::state() const {
  NamedTensors s = params_;
  s.insert(buffers_.begin(), buffers_.end());
  return s;
}

void EncoderModel::load_state(const NamedTensors& state) {
  if (state.size() != params_.size() + buffers_.size())
    throw ConfigError("load_state: expected " + std::to_string(params_.size() + buffers_.size()) +
                      " tensors, got " + std::to_string(state.size()));
  auto assign = [&](NamedTensors& dst) {
    for (auto& [name, t] : dst) {
      auto it = state.find(name);
      if (it == state.end()) throw ConfigError("load_state: missing tensor '" + name + "'");
      if (it->second.shape != t.shape)
        throw ConfigError("load_state: tensor '" + name + "' has shape " + shape_str(it->second.shape) +
                          ", model expects " + shape_str(t.shape));
    }
  };
  assign(params_);
  assign(buffers_);
  for (auto& [name, t] : params_) t = state.at(name);
  for (auto& [name, t] : buffers_) t = state.at(name);
}

std::size_t EncoderModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

int EncoderModel::feature_dim() const {
  if (config_.kind == EncoderKind::vit) return config_.width;
  return stage_channels(config_, config_.depth - 1);
}

int EncoderModel::token_count() const {
  const int side = config_.input_side / config_.patch;
  return side * side;
}

// ---------------------------------------------------------------------------

EncoderForward::EncoderForward(Graph& graph, EncoderModel& model, Trainable trainable, bool train_mode)
    : graph_(graph), model_(model), trainable_(trainable), train_mode_(train_mode) {}

Var EncoderForward::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Tensor& t = model_.params().at(name);
  Var v = trainable_ == Trainable::yes ? graph_.variable(t) : graph_.constant(t);
  bound_.emplace(name, v);
  return v;
}

Var EncoderForward::bn(Var x, const std::string& prefix) {
  ops::BatchNormState st;
  st.running_mean = &model_.buffers().at(prefix + ".running_mean");
  st.running_var = &model_.buffers().at(prefix + ".running_var");
  return ops::batch_norm(x, param(prefix + ".weight"), param(prefix + ".bias"), st, train_mode_);
}

Var EncoderForward::cnn_features(Var x) {
  const EncoderConfig& c = model_.config();
  Var h = ops::conv2d(x, param("stem.conv.weight"), 2, 3);
  h = ops::relu(bn(h, "stem.bn"));
  h = ops::max_pool2d(h, 3, 2, 1);
  for (int s = 0; s < c.depth; ++s) {
    for (int b = 0; b < c.blocks_per_stage; ++b) {
      const std::string p = block_prefix(s, b);
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      Var y = ops::relu(bn(ops::conv2d(h, param(p + ".conv1.weight"), stride, 1), p + ".bn1"));
      y = bn(ops::conv2d(y, param(p + ".conv2.weight"), 1, 1), p + ".bn2");
      Var skip = h;
      if (has_shortcut(s, b))
        skip = bn(ops::conv2d(h, param(p + ".shortcut.conv.weight"), stride, 0), p + ".shortcut.bn");
      h = ops::relu(ops::add(y, skip));
    }
  }
  return ops::global_avg_pool(h);
}

Var EncoderForward::vit_features(Var x) {
  const EncoderConfig& c = model_.config();
  const std::int64_t B = x.dim(0), T = model_.token_count(), D = c.width;
  auto dense = [&](Var t, const std::string& p) {
    const std::int64_t rows = t.dim(0) * t.dim(1);
    Var flat = ops::reshape(t, {rows, t.dim(2)});
    Var y = ops::linear(flat, param(p + ".weight"), param(p + ".bias"));
    return ops::reshape(y, {t.dim(0), t.dim(1), y.dim(1)});
  };
  auto norm = [&](Var t, const std::string& p) { return ops::layer_norm(t, param(p + ".weight"), param(p + ".bias")); };

  Var h = dense(ops::patchify(x, c.patch), "patch_embed");
  // Broadcast the positional table over the batch.
  Var pos = param("pos_embed");
  h = ops::add_bias(ops::reshape(h, {B, T * D}), ops::reshape(pos, {T * D}));
  h = ops::reshape(h, {B, T, D});
  for (int l = 0; l < c.depth; ++l) {
    const std::string p = "blocks." + std::to_string(l);
    Var n1 = norm(h, p + ".ln1");
    Var a = ops::attention(dense(n1, p + ".attn.q"), dense(n1, p + ".attn.k"), dense(n1, p + ".attn.v"), c.heads);
    h = ops::add(h, dense(a, p + ".attn.out"));
    Var n2 = norm(h, p + ".ln2");
    h = ops::add(h, dense(ops::gelu(dense(n2, p + ".mlp.fc1")), p + ".mlp.fc2"));
  }
  return ops::mean_axis(norm(h, "norm"), 1);
}

Var EncoderForward::features(Var x) {
  const EncoderConfig& c = model_.config();
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != c.in_channels || s[2] != c.input_side || s[3] != c.input_side)
    throw DimensionError("encoder expects [B×" + std::to_string(c.in_channels) + "×" +
                         std::to_string(c.input_side) + "×" + std::to_string(c.input_side) + "], got " +
                         shape_str(s));
  return c.kind == EncoderKind::vit ? vit_features(x) : cnn_features(x);
}

Var EncoderForward::project(Var f) {
  Var h = ops::relu(ops::linear(f, param("proj.fc1.weight"), param("proj.fc1.bias")));
  return ops::linear(h, param("proj.fc2.weight"), param("proj.fc2.bias"));
}

NamedTensors EncoderForward::gradients() const {
  NamedTensors g;
  if (trainable_ == Trainable::no) return g;
  for (const auto& [name, v] : bound_) g.emplace(name, graph_.grad(v));
  return g;
}

// ---------------------------------------------------------------------------

Tensor encode(EncoderModel& model, const Tensor& batch, bool train_mode) {
  Graph g;
  EncoderForward fwd(g, model, Trainable::no, train_mode);
  return fwd.encode(g.constant(batch)).value();
}

Tensor encode(const EncoderModel& model, const Tensor& batch) {
  // Eval mode never writes the running buffers.
  return encode(const_cast<EncoderModel&>(model), batch, false);
}

Tensor features(const EncoderModel& model, const Tensor& batch) {
  Graph g;
  EncoderForward fwd(g, const_cast<EncoderModel&>(model), Trainable::no, false);
  return fwd.features(g.constant(batch)).value();
}

Classifier attach_head(EncoderModel backbone, int num_classes, std::uint64_t seed, bool freeze_backbone) {
  if (num_classes < 2) throw ConfigError("attach_head: num_classes must be >= 2");
  Classifier clf;
  const int F = backbone.feature_dim();
  clf.backbone = std::move(backbone);
  clf.head_weight = Tensor({num_classes, F});
  Rng rng(derive_seed(seed, {hash_name("classifier.head")}));
  const double bound = std::sqrt(3.0 / F);
  for (auto& v : clf.head_weight.data) v = static_cast<float>(rng.uniform(-bound, bound));
  clf.head_bias = Tensor::zeros({num_classes});
  clf.freeze_backbone = freeze_backbone;
  return clf;
}

Tensor head_logits(const Classifier& clf, const Tensor& feats) {
  Graph g;
  return ops::linear(g.constant(feats), g.constant(clf.head_weight), g.constant(clf.head_bias)).value();
}

Tensor classifier_logits(const Classifier& clf, const Tensor& batch) {
  return head_logits(clf, features(clf.backbone, batch));
}

}  // namespace fssuavl
