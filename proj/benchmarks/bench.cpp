#include <benchmark/benchmark.h>

#include <numeric>

#include "fssuavl/autodiff.hpp"
#include "fssuavl/encoder.hpp"
#include "fssuavl/eval.hpp"
#include "fssuavl/kernels.hpp"
#include "fssuavl/orchestrator.hpp"
#include "fssuavl/ssl.hpp"

namespace {

using namespace fssuavl;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

std::vector<std::size_t> first(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  Tensor c({n, n});
  for (auto _ : state) {
    kernels::gemm(false, false, n, n, n, a.data.data(), b.data.data(), c.data.data(), false);
    benchmark::DoNotOptimize(c.data.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256)->Arg(512);

// 3×3 convolution as im2col + gemm, the path the encoder takes.
void BM_Conv3x3(benchmark::State& state) {
  const int C = static_cast<int>(state.range(0)), S = static_cast<int>(state.range(1));
  const Tensor x = random_tensor({C, S, S}, 3), w = random_tensor({C, C * 9}, 4);
  std::vector<float> col(static_cast<std::size_t>(C) * 9 * S * S);
  Tensor y({C, S * S});
  for (auto _ : state) {
    kernels::im2col(x.data.data(), C, S, S, 3, 3, 1, 1, S, S, col.data());
    kernels::gemm(false, false, C, S * S, C * 9, w.data.data(), col.data(), y.data.data(), false);
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(BM_Conv3x3)->Args({16, 64})->Args({32, 32})->Args({64, 16});

void BM_NtXent(benchmark::State& state) {
  const std::int64_t B = state.range(0);
  const Tensor z = random_tensor({2 * B, 128}, 5);
  for (auto _ : state) {
    Graph g;
    Var v = g.variable(z);
    Var loss = nt_xent_loss(v, 0.1f);
    g.backward(loss);
    benchmark::DoNotOptimize(g.grad(v).data.data());
  }
}
BENCHMARK(BM_NtXent)->Arg(32)->Arg(128)->Arg(256);

void BM_BarlowTwins(benchmark::State& state) {
  const std::int64_t B = state.range(0);
  const Tensor a = random_tensor({B, 128}, 6), b = random_tensor({B, 128}, 7);
  for (auto _ : state) {
    Graph g;
    Var va = g.variable(a), vb = g.variable(b);
    Var loss = barlow_twins_loss(va, vb, 0.005f);
    g.backward(loss);
    benchmark::DoNotOptimize(g.grad(va).data.data());
  }
}
BENCHMARK(BM_BarlowTwins)->Arg(32)->Arg(128);

// Two augmented views per sample for a batch of 32.
void BM_Featurize(benchmark::State& state) {
  const Modality m = state.range(0) == 0 ? Modality::image : Modality::audio;
  const Dataset d = gen_synthetic_corpus(m, 4, 8, 8);
  FeaturizeConfig f;
  f.side = static_cast<int>(state.range(1));
  const auto idx = first(32);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(featurize_batch(d, idx, f, ++seed, true).interleaved.data.data());
  state.SetLabel(to_string(m));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Featurize)->Args({0, 64})->Args({0, 128})->Args({1, 64})->Args({1, 128});

// One local SGD step: forward both views, NT-Xent, backward.
void BM_EncoderStep(benchmark::State& state) {
  EncoderConfig cfg;
  cfg.input_side = static_cast<int>(state.range(1));
  EncoderModel model = EncoderModel::build(cfg, 9);
  const std::int64_t B = state.range(0);
  const Tensor x = random_tensor({2 * B, 1, cfg.input_side, cfg.input_side}, 10);
  for (auto _ : state) {
    Graph g;
    EncoderForward fwd(g, model, Trainable::yes, true);
    Var loss = nt_xent_loss(fwd.encode(g.constant(x)), 0.1f);
    g.backward(loss);
    benchmark::DoNotOptimize(fwd.gradients());
  }
  state.SetItemsProcessed(state.iterations() * 2 * B);
}
BENCHMARK(BM_EncoderStep)->Args({8, 64})->Args({16, 128})->Unit(benchmark::kMillisecond);

void BM_FedAvg(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  std::vector<NamedTensors> models;
  std::vector<double> sizes;
  for (int k = 0; k < K; ++k) {
    models.push_back(EncoderModel::build(EncoderConfig{}, 100 + k).state());
    sizes.push_back(10.0 + k);
  }
  for (auto _ : state) benchmark::DoNotOptimize(fedavg(models, sizes));
}
BENCHMARK(BM_FedAvg)->Arg(2)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_KnnClassify(benchmark::State& state) {
  const std::int64_t M = state.range(0);
  std::vector<int> labels(M);
  for (std::int64_t i = 0; i < M; ++i) labels[i] = static_cast<int>(i % 10);
  const FeatureBank bank = FeatureBank::from_features(random_tensor({M, 128}, 11), labels, Modality::image);
  const Tensor q = random_tensor({100, 128}, 12);
  for (auto _ : state) benchmark::DoNotOptimize(knn_classify(bank, q, 200, 0.1f, 10));
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_KnnClassify)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
