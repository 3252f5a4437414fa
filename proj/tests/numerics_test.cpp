#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fssuavl/autodiff.hpp"
#include "fssuavl/error.hpp"
#include "fssuavl/kernels.hpp"
#include "fssuavl/optim.hpp"
#include "support/gradcheck_suite.hpp"

namespace fssuavl {
namespace {

Tensor values(Shape s, std::vector<float> v) { return Tensor(std::move(s), std::move(v)); }

TEST(Matmul, IdentityTimesMatrix) {
  Graph g;
  Var out = ops::matmul(g.constant(values({2, 2}, {1, 0, 0, 1})), g.constant(values({2, 2}, {5, 6, 7, 8})));
  EXPECT_EQ(out.value().data, (std::vector<float>{5, 6, 7, 8}));
}

TEST(Matmul, MatchesTripleLoop) {
  Graph g;
  Var out = ops::matmul(g.constant(values({2, 2}, {1, 2, 3, 4})), g.constant(values({2, 2}, {5, 6, 7, 8})));
  EXPECT_EQ(out.value().data, (std::vector<float>{19, 22, 43, 50}));

  // Larger, odd-sized operands exercise the tiled kernel's remainder paths.
  const Tensor a = ref::random_tensor({7, 133}, 1), b = ref::random_tensor({133, 37}, 2);
  Graph g2;
  Var big = ops::matmul(g2.constant(a), g2.constant(b));
  const ref::RT expect = ref::matmul(ref::RT::of(a), ref::RT::of(b));
  for (std::size_t i = 0; i < expect.n(); ++i) EXPECT_NEAR(big.value().data[i], expect.v[i], 1e-4);
}

TEST(Matmul, ZeroOperand) {
  Graph g;
  Var out = ops::matmul(g.constant(Tensor::zeros({2, 3})), g.constant(ref::random_tensor({3, 4}, 3)));
  EXPECT_EQ(out.shape(), (Shape{2, 4}));
  for (float v : out.value().data) EXPECT_EQ(v, 0.0f);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph g;
  try {
    ops::matmul(g.constant(Tensor::zeros({2, 3})), g.constant(Tensor::zeros({4, 2})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos);
  }
}

TEST(Conv2d, ScalarKernel) {
  Graph g;
  Var out = ops::conv2d(g.constant(Tensor::full({1, 1, 3, 3}, 1.0f)), g.constant(values({1, 1, 1, 1}, {2})), 1, 0);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 3, 3}));
  for (float v : out.value().data) EXPECT_EQ(v, 2.0f);
}

TEST(Conv2d, OutputShapeArithmetic) {
  Graph g;
  Var out = ops::conv2d(g.constant(Tensor::zeros({1, 1, 4, 4})), g.constant(Tensor::zeros({1, 1, 2, 2})), 2, 0);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 2, 2}));
}

TEST(Conv2d, MatchesDirectSum) {
  const Tensor x = ref::random_tensor({2, 3, 8, 8}, 11), k = ref::random_tensor({4, 3, 3, 3}, 12);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}, std::pair{2, 1}}) {
    Graph g;
    Var out = ops::conv2d(g.constant(x), g.constant(k), stride, pad);
    const ref::RT expect = ref::conv2d(ref::RT::of(x), ref::RT::of(k), stride, pad);
    ASSERT_EQ(out.shape(), expect.shape);
    for (std::size_t i = 0; i < expect.n(); ++i) EXPECT_NEAR(out.value().data[i], expect.v[i], 1e-5);
  }
}

TEST(Conv2d, NonPositiveOutputIsDimensionError) {
  Graph g;
  EXPECT_THROW(ops::conv2d(g.constant(Tensor::zeros({1, 1, 2, 2})), g.constant(Tensor::zeros({1, 1, 3, 3})), 1, 0),
               DimensionError);
}

TEST(Softmax, Examples) {
  Graph g;
  EXPECT_EQ(ops::softmax(g.constant(values({2}, {0, 0}))).value().data, (std::vector<float>{0.5f, 0.5f}));
  EXPECT_EQ(ops::softmax(g.constant(values({2}, {1000, 1000}))).value().data, (std::vector<float>{0.5f, 0.5f}));
  const auto p = ops::softmax(g.constant(values({2}, {0, static_cast<float>(std::log(3.0))}))).value().data;
  EXPECT_NEAR(p[0], 0.25, 1e-6);
  EXPECT_NEAR(p[1], 0.75, 1e-6);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor x = ref::random_tensor({4, 9}, seed, 5.0);
    Tensor shifted = x;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 9; ++c) shifted.data[r * 9 + c] += static_cast<float>(r * 3.0 - 4.0);
    Graph g;
    const auto a = ops::softmax(g.constant(x)).value().data;
    const auto b = ops::softmax(g.constant(shifted)).value().data;
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 9; ++c) {
        s += a[r * 9 + c];
        EXPECT_NEAR(a[r * 9 + c], b[r * 9 + c], 1e-6);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(L2Normalize, Examples) {
  Graph g;
  const auto v = ops::l2_normalize(g.constant(values({1, 2}, {3, 4}))).value().data;
  EXPECT_NEAR(v[0], 0.6, 1e-7);
  EXPECT_NEAR(v[1], 0.8, 1e-7);
  const auto u = ops::l2_normalize(g.constant(values({1, 3}, {0, 1, 0}))).value().data;
  EXPECT_EQ(u, (std::vector<float>{0, 1, 0}));
}

TEST(L2Normalize, DegenerateRowIsClampedAndFlagged) {
  Graph g;
  NormalizeInfo info;
  Var out = ops::l2_normalize(g.constant(values({2, 2}, {0, 0, 3, 4})), &info);
  ASSERT_EQ(info.clamped_rows, (std::vector<std::size_t>{0}));
  EXPECT_EQ(out.value().data[0], 0.0f);
  EXPECT_TRUE(out.value().all_finite());
}

TEST(L2Normalize, Idempotent) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Graph g;
    Var once = ops::l2_normalize(g.constant(ref::random_tensor({5, 7}, seed, 3.0)));
    Var twice = ops::l2_normalize(once);
    for (std::size_t i = 0; i < once.value().numel(); ++i)
      EXPECT_NEAR(once.value().data[i], twice.value().data[i], 1e-6);
    for (std::size_t r = 0; r < 5; ++r)
      EXPECT_NEAR(kernels::dot(&once.value().data[r * 7], &once.value().data[r * 7], 7), 1.0, 1e-6);
  }
}

TEST(Backward, SumGivesOnes) {
  Graph g;
  Var x = g.variable(ref::random_tensor({2, 3, 2}, 4));
  g.backward(ops::sum(x));
  for (float v : g.grad(x).data) EXPECT_EQ(v, 1.0f);
}

TEST(Backward, Quadratic) {
  Graph g;
  Var x = g.variable(values({3}, {1, 2, 3}));
  g.backward(ops::sum(ops::mul(x, x)));
  EXPECT_EQ(g.grad(x).data, (std::vector<float>{2, 4, 6}));
}

TEST(Backward, NonScalarLossIsContractError) {
  Graph g;
  Var x = g.variable(Tensor::zeros({2}));
  EXPECT_THROW(g.backward(x), ContractError);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Graph g;
  Var w = g.variable(values({2}, {1, 2}));
  Var c = g.constant(values({2}, {3, 4}));
  g.backward(ops::sum(ops::mul(w, c)));
  EXPECT_EQ(g.grad(w).data, (std::vector<float>{3, 4}));
  EXPECT_EQ(g.grad(c).data, (std::vector<float>{0, 0}));
}

TEST(GradCheck, EveryOpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (const auto& c : ref::run_op_gradchecks(seed)) {
      EXPECT_GT(c.result.checked, 0u) << c.op;
      EXPECT_LT(c.result.max_rel_error, 1e-3) << c.op << " seed " << seed;
    }
  }
}

TEST(Sgd, SingleStepNoMomentum) {
  Sgd opt({.base_lr = 0.1f, .weight_decay = 0.0f, .momentum = 0.0f, .total_steps = 0});
  NamedTensors w{{"w", Tensor::full({1}, 1.0f)}};
  opt.step(w, {{"w", Tensor::full({1}, 2.0f)}});
  EXPECT_FLOAT_EQ(w["w"].data[0], 0.8f);
  EXPECT_EQ(opt.steps_taken(), 1);
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  Sgd opt({.base_lr = 0.1f, .weight_decay = 0.0f, .momentum = 0.9f, .total_steps = 0});
  NamedTensors w{{"w", values({3}, {1, -2, 3})}};
  const NamedTensors before = w;
  opt.step(w, {{"w", Tensor::zeros({3})}});
  opt.step(w, {{"w", Tensor::zeros({3})}});
  EXPECT_EQ(w, before);
}

TEST(Sgd, MomentumMatchesHandRecurrence) {
  const float lr = 0.05f, m = 0.9f, wd = 1e-4f;
  Sgd opt({.base_lr = lr, .weight_decay = wd, .momentum = m, .total_steps = 0});
  NamedTensors w{{"w", values({2}, {0.5f, -1.0f})}};
  const std::vector<float> g1{0.2f, -0.3f}, g2{-0.1f, 0.4f};
  opt.step(w, {{"w", values({2}, g1)}});
  opt.step(w, {{"w", values({2}, g2)}});
  const std::vector<float> w0{0.5f, -1.0f};
  for (int i = 0; i < 2; ++i) {
    float v = 0.0f, x = w0[i];
    v = m * v + g1[i] + wd * x;
    x -= lr * v;
    v = m * v + g2[i] + wd * x;
    x -= lr * v;
    EXPECT_EQ(w["w"].data[i], x);
  }
}

TEST(Sgd, ShapeMismatch) {
  Sgd opt({});
  NamedTensors w{{"w", Tensor::zeros({2})}};
  EXPECT_THROW(opt.step(w, {{"w", Tensor::zeros({3})}}), DimensionError);
}

TEST(CosineLr, Endpoints) {
  EXPECT_FLOAT_EQ(cosine_lr(0, 100, 0.03f), 0.03f);
  EXPECT_NEAR(cosine_lr(100, 100, 0.03f), 0.0f, 1e-9);
  EXPECT_NEAR(cosine_lr(50, 100, 0.03f), 0.015f, 1e-8);
  EXPECT_NEAR(cosine_lr(250, 100, 0.03f), 0.0f, 1e-9);  // clamped
}

TEST(CosineLr, MonotoneNonIncreasing) {
  float prev = cosine_lr(0, 37, 1.0f);
  for (int s = 1; s <= 37; ++s) {
    const float cur = cosine_lr(s, 37, 1.0f);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
}

TEST(Determinism, RepeatedGraphsAreBitIdentical) {
  auto run = [] {
    Graph g;
    Var x = g.variable(ref::random_tensor({2, 3, 9, 9}, 5));
    Var k = g.variable(ref::random_tensor({4, 3, 3, 3}, 6));
    Var y = ops::global_avg_pool(ops::relu(ops::conv2d(x, k, 2, 1)));
    g.backward(ops::mean(ops::softmax(y)));
    return std::pair{g.grad(x), g.grad(k)};
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace fssuavl
