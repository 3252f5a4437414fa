#include <gtest/gtest.h>

#include <random>
#include <set>

#include "fssuavl/encoder.hpp"
#include "fssuavl/error.hpp"
#include "fssuavl/optim.hpp"
#include "support/encoder_gradcheck.hpp"

namespace fssuavl {
namespace {

EncoderConfig tiny_cnn() {
  EncoderConfig c;
  c.width = 4;
  c.depth = 2;
  c.input_side = 16;
  c.proj_dim = 8;
  return c;
}

EncoderConfig tiny_vit() {
  EncoderConfig c;
  c.kind = EncoderKind::vit;
  c.width = 8;
  c.depth = 2;
  c.heads = 2;
  c.patch = 4;
  c.input_side = 8;
  c.proj_dim = 6;
  return c;
}

std::set<std::string> names(const NamedTensors& t) {
  std::set<std::string> s;
  for (const auto& [k, _] : t) s.insert(k);
  return s;
}

TEST(BuildEncoder, SameSeedIsBitIdentical) {
  for (const auto& cfg : {EncoderConfig{}, EncoderConfig::vit_small()}) {
    const auto a = EncoderModel::build(cfg, 11), b = EncoderModel::build(cfg, 11);
    EXPECT_EQ(a.params(), b.params());
    EXPECT_EQ(a.buffers(), b.buffers());
    EXPECT_NE(a.params(), EncoderModel::build(cfg, 12).params());
  }
}

TEST(BuildEncoder, VitTokenCount) {
  EncoderConfig c = EncoderConfig::vit_small();
  EXPECT_EQ(EncoderModel::build(c, 0).token_count(), 64);
  c.input_side = 96;
  EXPECT_EQ(EncoderModel::build(c, 0).token_count(), 36);
  EXPECT_EQ(EncoderModel::build(c, 0).params().at("pos_embed").shape, (Shape{36, 64}));
}

TEST(BuildEncoder, CnnParameterCountMatchesHandCount) {
  // width 16, 4 stages of one basic block, 1 input channel, 128-d projection.
  // conv weights are out·in·k², every batch norm contributes 2·channels.
  const std::size_t stem = 16 * 1 * 49 + 2 * 16;
  const std::size_t stage1 = 2 * (16 * 16 * 9) + 2 * (2 * 16);
  auto down = [](std::size_t c) {  // c = stage channels, input c/2, with 1×1 shortcut
    return c * (c / 2) * 9 + c * c * 9 + c * (c / 2) + 3 * (2 * c);
  };
  const std::size_t head = (128 * 128 + 128) + (128 * 128 + 128);
  const std::size_t expected = stem + stage1 + down(32) + down(64) + down(128) + head;
  EXPECT_EQ(expected, 340912u);
  EXPECT_EQ(EncoderModel::build(EncoderConfig{}, 3).parameter_count(), expected);
}

TEST(BuildEncoder, ParameterNameSetsAgree) {
  for (const auto& cfg : {EncoderConfig{}, EncoderConfig::vit_small(), EncoderConfig::resnet18()}) {
    const auto a = EncoderModel::build(cfg, 1), b = EncoderModel::build(cfg, 99);
    EXPECT_EQ(names(a.params()), names(b.params()));
    EXPECT_EQ(names(a.buffers()), names(b.buffers()));
  }
}

TEST(BuildEncoder, InitializationScheme) {
  const auto m = EncoderModel::build(EncoderConfig{}, 5);
  for (float v : m.params().at("stem.bn.weight").data) EXPECT_EQ(v, 1.0f);
  for (float v : m.params().at("stem.bn.bias").data) EXPECT_EQ(v, 0.0f);
  for (float v : m.params().at("proj.fc1.bias").data) EXPECT_EQ(v, 0.0f);
  const float bound = std::sqrt(3.0f / (16 * 9));
  for (float v : m.params().at("stage1.block0.conv1.weight").data) EXPECT_LE(std::abs(v), bound);
}

TEST(BuildEncoder, InvalidConfigListsEveryField) {
  EncoderConfig c = EncoderConfig::vit_small();
  c.patch = 7;
  c.proj_dim = 1;
  c.heads = 3;
  try {
    EncoderModel::build(c, 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("encoder.patch"), std::string::npos);
    EXPECT_NE(msg.find("encoder.proj_dim"), std::string::npos);
    EXPECT_NE(msg.find("encoder.heads"), std::string::npos);
  }
  EXPECT_THROW(encoder_kind_from_string("mlp"), ConfigError);
}

TEST(Encode, OutputShape) {
  for (const auto& cfg : {EncoderConfig{}, EncoderConfig::vit_small()}) {
    auto m = EncoderModel::build(cfg, 2);
    const Tensor x = ref::random_tensor({2, 1, 128, 128}, 4);
    EXPECT_EQ(encode(m, x, false).shape, (Shape{2, 128}));
    EXPECT_EQ(encode(m, x, true).shape, (Shape{2, 128}));
  }
}

TEST(Encode, WrongSpatialDimsThrow) {
  const auto m = EncoderModel::build(tiny_cnn(), 2);
  EXPECT_THROW(encode(m, ref::random_tensor({2, 1, 15, 16}, 1)), DimensionError);
  EXPECT_THROW(features(m, ref::random_tensor({2, 3, 16, 16}, 1)), DimensionError);
}

TEST(Encode, DuplicatedRowsGiveDuplicatedOutputs) {
  for (const auto& cfg : {tiny_cnn(), tiny_vit()}) {
    const auto m = EncoderModel::build(cfg, 7);
    const Tensor one = ref::random_tensor({1, 1, cfg.input_side, cfg.input_side}, 8);
    Tensor two({2, 1, cfg.input_side, cfg.input_side});
    std::copy(one.data.begin(), one.data.end(), two.data.begin());
    std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.numel());
    const Tensor out = encode(m, two);
    const std::size_t d = cfg.proj_dim;
    for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(out.data[j], out.data[d + j]);
  }
}

TEST(Encode, PermutationEquivariantInEvalMode) {
  for (const auto& cfg : {tiny_cnn(), tiny_vit()}) {
    const auto m = EncoderModel::build(cfg, 9);
    const std::int64_t B = 5, S = cfg.input_side, n = S * S;
    const Tensor x = ref::random_tensor({B, 1, S, S}, 10);
    const std::vector<int> perm{3, 0, 4, 1, 2};
    Tensor px(x.shape);
    for (std::int64_t i = 0; i < B; ++i)
      std::copy_n(x.data.begin() + perm[i] * n, n, px.data.begin() + i * n);
    const Tensor a = features(m, x), b = features(m, px);
    const std::int64_t F = m.feature_dim();
    for (std::int64_t i = 0; i < B; ++i)
      for (std::int64_t j = 0; j < F; ++j) EXPECT_NEAR(b.data[i * F + j], a.data[perm[i] * F + j], 1e-6);
  }
}

TEST(Encode, TrainModeUpdatesRunningStatsOnly) {
  auto m = EncoderModel::build(tiny_cnn(), 1);
  const auto before = m.state();
  const Tensor x = ref::random_tensor({4, 1, 16, 16}, 2);
  encode(m, x, false);
  EXPECT_EQ(m.state(), before);
  encode(m, x, true);
  EXPECT_EQ(m.params(), EncoderModel::build(tiny_cnn(), 1).params());
  EXPECT_NE(m.buffers(), EncoderModel::build(tiny_cnn(), 1).buffers());
}

TEST(Features, DimensionMatchesArchitecture) {
  const auto vit = EncoderModel::build(tiny_vit(), 1);
  EXPECT_EQ(features(vit, ref::random_tensor({3, 1, 8, 8}, 1)).shape, (Shape{3, 8}));
  const auto cnn = EncoderModel::build(tiny_cnn(), 1);
  EXPECT_EQ(features(cnn, ref::random_tensor({3, 1, 16, 16}, 1)).shape, (Shape{3, 8}));
  EXPECT_EQ(EncoderModel::build(EncoderConfig{}, 1).feature_dim(), 128);
}

TEST(Features, IdenticalInputIdenticalFeatures) {
  const auto m = EncoderModel::build(tiny_vit(), 4);
  const Tensor x = ref::random_tensor({2, 1, 8, 8}, 5);
  EXPECT_EQ(features(m, x), features(m, x));
}

TEST(Encode, ForwardMatchesReference) {
  for (bool train : {false, true}) {
    for (const auto& cfg : {tiny_cnn(), tiny_vit()}) {
      auto m = EncoderModel::build(cfg, 21);
      const auto p = ref::ref_params(m.params()), b = ref::ref_params(m.buffers());
      const Tensor x = ref::random_tensor({3, 1, cfg.input_side, cfg.input_side}, 22);
      const ref::RT expect = ref::RefEncoder(cfg, p, b, train).encode(ref::RT::of(x));
      const Tensor got = encode(m, x, train);
      for (std::size_t i = 0; i < expect.n(); ++i) EXPECT_NEAR(got.data[i], expect.v[i], 1e-4);
    }
  }
}

void expect_gradients_match(const EncoderConfig& cfg, bool train, std::uint64_t seed) {
  const auto r = ref::encoder_gradcheck(cfg, train, seed);
  EXPECT_TRUE(r.names_match);
  EXPECT_LT(r.max_rel_error, 1e-3);
  // Nearly every coordinate must be checkable.
  EXPECT_LT(r.straddling * 10, r.checked) << r.straddling << " of " << r.checked + r.straddling;
}

TEST(Encode, CnnGradientMatchesFiniteDifferences) {
  expect_gradients_match(tiny_cnn(), true, 31);
  expect_gradients_match(tiny_cnn(), false, 32);
}

TEST(Encode, VitGradientMatchesFiniteDifferences) {
  expect_gradients_match(tiny_vit(), true, 41);
  expect_gradients_match(tiny_vit(), false, 42);
}

TEST(AttachHead, LogitShape) {
  const auto clf = attach_head(EncoderModel::build(tiny_cnn(), 1), 10, 2, true);
  EXPECT_EQ(clf.num_classes(), 10);
  EXPECT_EQ(classifier_logits(clf, ref::random_tensor({4, 1, 16, 16}, 3)).shape, (Shape{4, 10}));
  EXPECT_THROW(attach_head(EncoderModel::build(tiny_cnn(), 1), 1, 2, true), ConfigError);
}

TEST(AttachHead, FrozenBackboneGetsNoGradient) {
  auto clf = attach_head(EncoderModel::build(tiny_cnn(), 1), 3, 2, true);
  Graph g;
  EncoderForward fwd(g, clf.backbone, Trainable::no, false);
  Var w = g.variable(clf.head_weight), bias = g.variable(clf.head_bias);
  Var logits = ops::linear(fwd.features(g.constant(ref::random_tensor({4, 1, 16, 16}, 3))), w, bias);
  g.backward(ops::cross_entropy(logits, {0, 1, 2, 0}));
  EXPECT_TRUE(fwd.gradients().empty());
  float gsum = 0;
  for (float v : g.grad(w).data) gsum += std::abs(v);
  EXPECT_GT(gsum, 0.0f);
}

TEST(AttachHead, HeadOnlyTrainingSeparatesToyFeatures) {
  // Two Gaussian blobs on either side of a hyperplane through the origin.
  const std::int64_t N = 40, F = 8;
  auto clf = attach_head(EncoderModel::build(tiny_cnn(), 1), 2, 5, true);
  Tensor feats({N, F});
  std::vector<int> y(N);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd(0, 0.3);
  for (std::int64_t i = 0; i < N; ++i) {
    y[i] = static_cast<int>(i % 2);
    for (std::int64_t j = 0; j < F; ++j) feats.data[i * F + j] = static_cast<float>(nd(rng));
    feats.data[i * F] += y[i] ? 1.0f : -1.0f;
  }
  NamedTensors head{{"w", clf.head_weight}, {"b", clf.head_bias}};
  SgdConfig sc;
  sc.base_lr = 0.1f;
  sc.weight_decay = 0;
  Sgd sgd(sc);
  for (int step = 0; step < 200; ++step) {
    Graph g;
    Var w = g.variable(head["w"]), b = g.variable(head["b"]);
    g.backward(ops::cross_entropy(ops::linear(g.constant(feats), w, b), y));
    sgd.step(head, {{"w", g.grad(w)}, {"b", g.grad(b)}});
  }
  clf.head_weight = head["w"];
  clf.head_bias = head["b"];
  const Tensor logits = head_logits(clf, feats);
  int correct = 0;
  for (std::int64_t i = 0; i < N; ++i)
    correct += (logits.data[i * 2 + 1] > logits.data[i * 2]) == (y[i] == 1);
  EXPECT_EQ(correct, N);
}

}  // namespace
}  // namespace fssuavl
