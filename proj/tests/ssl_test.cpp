#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fssuavl/error.hpp"
#include "fssuavl/ssl.hpp"
#include "support/reference.hpp"

namespace fssuavl {
namespace {

// Brute force: for every anchor, enumerate every other row explicitly.
double nt_xent_oracle(const ref::RT& e, double tau) {
  const auto N = e.d(0), D = e.d(1);
  auto cos = [&](std::int64_t i, std::int64_t j) {
    double dot = 0, ni = 0, nj = 0;
    for (std::int64_t k = 0; k < D; ++k) {
      dot += e.v[i * D + k] * e.v[j * D + k];
      ni += e.v[i * D + k] * e.v[i * D + k];
      nj += e.v[j * D + k] * e.v[j * D + k];
    }
    return dot / (std::sqrt(ni) * std::sqrt(nj));
  };
  double total = 0;
  for (std::int64_t a = 0; a < N; ++a) {
    const std::int64_t pos = a % 2 == 0 ? a + 1 : a - 1;
    double denom = 0;
    for (std::int64_t c = 0; c < N; ++c)
      if (c != a) denom += std::exp(cos(a, c) / tau);
    total += -std::log(std::exp(cos(a, pos) / tau) / denom);
  }
  return total / N;
}

double bt_oracle(const ref::RT& a, const ref::RT& b, double lambda) {
  const ref::RT za = ref::standardize_columns(a, 1e-6), zb = ref::standardize_columns(b, 1e-6);
  const auto B = a.d(0), D = a.d(1);
  double loss = 0;
  for (std::int64_t i = 0; i < D; ++i)
    for (std::int64_t j = 0; j < D; ++j) {
      double c = 0;
      for (std::int64_t n = 0; n < B; ++n) c += za.v[n * D + i] * zb.v[n * D + j];
      c /= B;
      loss += i == j ? (1 - c) * (1 - c) : lambda * c * c;
    }
  return loss;
}

float nt_xent_value(const Tensor& e, float tau) {
  Graph g;
  return nt_xent_loss(g.constant(e), tau).value().data[0];
}

float bt_value(const Tensor& a, const Tensor& b, float lambda) {
  Graph g;
  return barlow_twins_loss(g.constant(a), g.constant(b), lambda).value().data[0];
}

TEST(NtXent, IdenticalEmbeddingsGiveLn3) {
  EXPECT_NEAR(nt_xent_value(Tensor::full({4, 5}, 0.7f), 0.5f), std::log(3.0), 1e-5);
}

TEST(NtXent, AlignedPositivesOrthogonalNegatives) {
  const Tensor e({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  EXPECT_NEAR(nt_xent_value(e, 0.5f), std::log(1 + 2 * std::exp(-2.0)), 1e-5);
}

TEST(NtXent, MatchesPairEnumerationOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::int64_t B = 2 + static_cast<std::int64_t>(seed % 5), D = 3 + static_cast<std::int64_t>(seed % 7);
    const Tensor e = ref::random_tensor({2 * B, D}, seed);
    EXPECT_NEAR(nt_xent_value(e, 0.5f), nt_xent_oracle(ref::RT::of(e), 0.5), 1e-5) << "seed " << seed;
  }
}

TEST(NtXent, RotationAndScaleInvariant) {
  const Tensor e = ref::random_tensor({6, 2}, 3);
  Tensor rot = e, scaled = e;
  const double th = 0.7;
  for (int i = 0; i < 6; ++i) {
    const float x = e.data[2 * i], y = e.data[2 * i + 1];
    rot.data[2 * i] = static_cast<float>(std::cos(th) * x - std::sin(th) * y);
    rot.data[2 * i + 1] = static_cast<float>(std::sin(th) * x + std::cos(th) * y);
  }
  for (auto& v : scaled.data) v *= 13.5f;
  EXPECT_NEAR(nt_xent_value(rot, 0.5f), nt_xent_value(e, 0.5f), 1e-5);
  EXPECT_NEAR(nt_xent_value(scaled, 0.5f), nt_xent_value(e, 0.5f), 1e-5);
}

TEST(NtXent, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = ref::gradcheck(
        {ref::random_tensor({4, 8}, seed)},
        [](Graph&, const std::vector<Var>& in) { return nt_xent_loss(in[0], 0.5f); },
        [](const std::vector<ref::RT>& in) {
          ref::RT out(Shape{1});
          out.v[0] = nt_xent_oracle(in[0], 0.5);
          return out;
        },
        seed);
    EXPECT_LT(r.max_rel_error, 1e-3);
  }
}

TEST(NtXent, NeedsTwoPairs) {
  EXPECT_THROW(nt_xent_value(ref::random_tensor({2, 4}, 1), 0.5f), ContractError);
  EXPECT_THROW(nt_xent_value(ref::random_tensor({5, 4}, 1), 0.5f), DimensionError);
}

TEST(BarlowTwins, ZeroAtDecorrelatedFixedPoint) {
  const Tensor z({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  EXPECT_NEAR(bt_value(z, z, 5e-3f), 0.0, 1e-6);
}

TEST(BarlowTwins, AntiAlignedIsFourD) {
  const Tensor z({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  Tensor neg = z;
  for (auto& v : neg.data) v = -v;
  EXPECT_NEAR(bt_value(z, neg, 5e-3f), 4.0 * 2, 1e-5);
}

TEST(BarlowTwins, NonNegativeAndMatchesOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor a = ref::random_tensor({6, 4}, seed), b = ref::random_tensor({6, 4}, seed + 1000);
    const float v = bt_value(a, b, 5e-3f);
    EXPECT_GE(v, 0.0f);
    EXPECT_NEAR(v, bt_oracle(ref::RT::of(a), ref::RT::of(b), 5e-3), 1e-4 * std::max(1.0, std::abs(double(v))));
  }
}

TEST(BarlowTwins, RowPermutationInvariant) {
  const Tensor a = ref::random_tensor({5, 3}, 1), b = ref::random_tensor({5, 3}, 2);
  Tensor pa = a, pb = b;
  const int perm[5] = {4, 2, 0, 3, 1};
  for (int i = 0; i < 5; ++i)
    for (int d = 0; d < 3; ++d) {
      pa.data[i * 3 + d] = a.data[perm[i] * 3 + d];
      pb.data[i * 3 + d] = b.data[perm[i] * 3 + d];
    }
  EXPECT_NEAR(bt_value(pa, pb, 5e-3f), bt_value(a, b, 5e-3f), 1e-5);
}

TEST(BarlowTwins, ConstantColumnIsGuarded) {
  Tensor a = ref::random_tensor({4, 3}, 1);
  for (int i = 0; i < 4; ++i) a.data[i * 3] = 2.0f;
  EXPECT_TRUE(std::isfinite(bt_value(a, a, 5e-3f)));
}

TEST(BarlowTwins, GradientMatchesFiniteDifferences) {
  const auto r = ref::gradcheck(
      {ref::random_tensor({6, 4}, 7), ref::random_tensor({6, 4}, 8)},
      [](Graph&, const std::vector<Var>& in) { return barlow_twins_loss(in[0], in[1], 0.1f); },
      [](const std::vector<ref::RT>& in) {
        ref::RT out(Shape{1});
        out.v[0] = bt_oracle(in[0], in[1], 0.1);
        return out;
      },
      9);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(MakeSchedule, UnimodalClient) {
  Rng rng(1);
  const auto s = make_schedule(10, 0, 4, rng);
  EXPECT_EQ(s.size(), 3u);
  for (const auto& b : s) EXPECT_EQ(b.modality, Modality::image);
}

TEST(MakeSchedule, OneBatchPerModality) {
  Rng rng(2);
  const auto s = make_schedule(256, 256, 256, rng);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_NE(s[0].modality, s[1].modality);
}

TEST(MakeSchedule, CoverageAndPurity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t ni = 3 + seed * 7 % 40, na = seed * 11 % 33;
    const auto s = make_schedule(ni, na, 8, rng);
    std::vector<std::size_t> img, aud;
    for (const auto& b : s) {
      EXPECT_GE(b.positions.size(), 2u);
      EXPECT_LE(b.positions.size(), 8u);
      auto& dst = b.modality == Modality::image ? img : aud;
      dst.insert(dst.end(), b.positions.begin(), b.positions.end());
    }
    std::sort(img.begin(), img.end());
    std::sort(aud.begin(), aud.end());
    // Everything is covered exactly once, except a dropped trailing singleton.
    EXPECT_TRUE(img.size() == ni || (ni % 8 == 1 && img.size() == ni - 1));
    EXPECT_TRUE(aud.size() == na || (na % 8 == 1 && aud.size() == na - 1));
    EXPECT_TRUE(std::adjacent_find(img.begin(), img.end()) == img.end());
    EXPECT_TRUE(std::adjacent_find(aud.begin(), aud.end()) == aud.end());
  }
  Rng rng(0);
  EXPECT_THROW(make_schedule(0, 0, 4, rng), ContractError);
}

struct TinySetup {
  EncoderConfig enc;
  FeaturizeConfig feat;
  Dataset images, audio;
  ClientShard client;

  explicit TinySetup(std::uint64_t seed, bool with_audio = true) {
    enc.width = 8;
    enc.depth = 2;
    enc.input_side = 32;
    enc.proj_dim = 16;
    feat.side = 32;
    feat.max_freq_mask = feat.max_time_mask = 4;
    images = gen_synthetic_corpus(Modality::image, 4, 6, seed);
    audio = gen_synthetic_corpus(Modality::audio, 4, with_audio ? 4 : 1, seed);
    for (std::size_t i = 0; i < images.size(); ++i) client.image_indices.push_back(i);
    if (with_audio)
      for (std::size_t i = 0; i < audio.size(); ++i) client.audio_indices.push_back(i);
    client.client_id = 3;
  }
};

TEST(LocalTrain, ZeroEpochsIsIdentity) {
  TinySetup t(1);
  const auto w = EncoderModel::build(t.enc, 5).state();
  SslConfig cfg;
  cfg.local_epochs = 0;
  EXPECT_EQ(local_train(t.enc, w, t.client, t.images, t.audio, cfg, t.feat, 9).weights, w);
}

TEST(LocalTrain, BitwiseReproducibleAndPure) {
  TinySetup t(2);
  const auto w = EncoderModel::build(t.enc, 5).state();
  SslConfig cfg;
  cfg.local_epochs = 1;
  cfg.batch_size = 8;
  const auto a = local_train(t.enc, w, t.client, t.images, t.audio, cfg, t.feat, 9);
  const auto b = local_train(t.enc, w, t.client, t.images, t.audio, cfg, t.feat, 9);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_NE(a.weights, w);
  ASSERT_EQ(a.trace.size(), 5u);  // 24 images / 8 + 16 audio / 8
  int image_batches = 0;
  for (const auto& r : a.trace) image_batches += r.modality == Modality::image;
  EXPECT_EQ(image_batches, 3);
  EXPECT_NE(local_train(t.enc, w, t.client, t.images, t.audio, cfg, t.feat, 10).weights, a.weights);
  // Cosine decay within the call: first step at the base rate, then decreasing.
  EXPECT_FLOAT_EQ(a.trace.front().lr, cfg.lr);
  for (std::size_t i = 1; i < a.trace.size(); ++i) EXPECT_LT(a.trace[i].lr, a.trace[i - 1].lr);
}

TEST(LocalTrain, BarlowTwinsRuns) {
  TinySetup t(3);
  SslConfig cfg;
  cfg.loss = SslLoss::barlow_twins;
  cfg.local_epochs = 1;
  cfg.batch_size = 8;
  const auto r = local_train(t.enc, EncoderModel::build(t.enc, 1).state(), t.client, t.images, t.audio, cfg, t.feat, 1);
  for (const auto& rec : r.trace) EXPECT_TRUE(std::isfinite(rec.loss));
}

TEST(LocalTrain, LossDecreasesOnUnimodalClient) {
  std::vector<double> drops;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TinySetup t(seed, false);
    SslConfig cfg;
    cfg.local_epochs = 6;
    cfg.batch_size = 8;
    const auto r =
        local_train(t.enc, EncoderModel::build(t.enc, seed).state(), t.client, t.images, t.audio, cfg, t.feat, seed);
    double first = 0, last = 0;
    int nf = 0, nl = 0;
    for (const auto& rec : r.trace) {
      if (rec.epoch == 0) first += rec.loss, ++nf;
      if (rec.epoch == cfg.local_epochs - 1) last += rec.loss, ++nl;
    }
    drops.push_back(first / nf - last / nl);
  }
  std::sort(drops.begin(), drops.end());
  EXPECT_GT(drops[2], 0.0);
}

TEST(LocalTrain, NonFiniteLossAborts) {
  TinySetup t(4);
  auto w = EncoderModel::build(t.enc, 1).state();
  w.at("proj.fc2.weight").data[0] = std::numeric_limits<float>::quiet_NaN();
  SslConfig cfg;
  cfg.local_epochs = 1;
  cfg.batch_size = 8;
  try {
    local_train(t.enc, w, t.client, t.images, t.audio, cfg, t.feat, 1);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("client 3"), std::string::npos);
  }
}

TEST(LocalTrain, EmptyClientRejected) {
  TinySetup t(5);
  ClientShard empty;
  EXPECT_THROW(local_train(t.enc, EncoderModel::build(t.enc, 1).state(), empty, t.images, t.audio, SslConfig{}, t.feat, 1),
               ContractError);
}

}  // namespace
}  // namespace fssuavl
