#include "fssuavl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "fssuavl/error.hpp"
#include "fssuavl/kernels.hpp"

namespace fssuavl {

const Tensor& Var::value() const {
  if (!graph_) throw ContractError("use of an unbound Var");
  return graph_->value(*this);
}

int Graph::check(Var v) const {
  if (v.graph_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size())
    throw ContractError("Var does not belong to this graph");
  return v.id_;
}

Var Graph::constant(Tensor value) { return record("constant", std::move(value), {}, nullptr); }

Var Graph::variable(Tensor value) {
  Var v = record("variable", std::move(value), {}, nullptr);
  nodes_[v.id_].requires_grad = true;
  return v;
}

Var Graph::record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (const Var& in : inputs) {
    n.inputs.push_back(check(in));
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::span<float> Graph::grad_sink(Var v) {
  Node& n = nodes_[check(v)];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0f);
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  if (n.grad.empty()) return Tensor::zeros(n.value.shape);
  return Tensor(n.value.shape, n.grad);
}

void Graph::backward(Var loss) {
  const int root = check(loss);
  if (nodes_[root].value.numel() != 1 || !nodes_[root].value.shape.empty())
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(nodes_[root].value.shape));
  if (differentiated_) throw ContractError("graph was already differentiated");
  differentiated_ = true;
  if (!nodes_[root].requires_grad) return;
  nodes_[root].grad.assign(1, 1.0f);
  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, Var(this, i), std::span<const float>(n.grad));
  }
}

namespace ops {
namespace {

Graph& same_graph(Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph())
    throw ContractError("operands belong to different graphs");
  return a.graph();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_rank(const char* op, Var x, std::size_t rank) {
  if (x.shape().size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
}

// Splits a shape around the last axis: rows × cols.
std::pair<std::size_t, std::size_t> rows_cols(const Shape& s) {
  if (s.empty()) return {1, 1};
  const std::size_t cols = static_cast<std::size_t>(s.back());
  return {shape_numel(s) / cols, cols};
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bv[i];
  return g.record("add", std::move(out), {a, b}, [a, b](Graph& g, Var, std::span<const float> go) {
    for (Var in : {a, b}) {
      auto gi = g.grad_sink(in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= bv[i];
  return g.record("sub", std::move(out), {a, b}, [a, b](Graph& g, Var, std::span<const float> go) {
    auto ga = g.grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    auto gb = g.grad_sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv[i];
  return g.record("mul", std::move(out), {a, b}, [a, b](Graph& g, Var, std::span<const float> go) {
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    auto ga = g.grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    auto gb = g.grad_sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
  });
}

Var scale(Var a, float s) {
  Tensor out = a.value();
  for (float& v : out.data) v *= s;
  return a.graph().record("scale", std::move(out), {a}, [a, s](Graph& g, Var, std::span<const float> go) {
    auto ga = g.grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * s;
  });
}

Var add_scalar(Var a, float s) {
  Tensor out = a.value();
  for (float& v : out.data) v += s;
  return a.graph().record("add_scalar", std::move(out), {a}, [a](Graph& g, Var, std::span<const float> go) {
    auto ga = g.grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (float& v : out.data) v = v < 0.0f ? 0.0f : v;  // NaN passes through
  return x.graph().record("relu", std::move(out), {x}, [x](Graph& g, Var, std::span<const float> go) {
    const auto& xv = x.value().data;
    auto gx = g.grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xv[i] > 0.0f) gx[i] += go[i];
  });
}

Var gelu(Var x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  Tensor out = x.value();
  for (float& v : out.data) v = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  return x.graph().record("gelu", std::move(out), {x}, [x](Graph& g, Var, std::span<const float> go) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const auto& xv = x.value().data;
    auto gx = g.grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += static_cast<float>(go[i] * (cdf + v * pdf));
    }
  });
}

Var add_bias(Var x, Var bias) {
  Graph& g = same_graph(x, bias);
  const auto [rows, cols] = rows_cols(x.shape());
  if (bias.shape() != Shape{static_cast<std::int64_t>(cols)})
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  Tensor out = x.value();
  const auto& bv = bias.value().data;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] += bv[c];
  return g.record("add_bias", std::move(out), {x, bias},
                  [x, bias, rows, cols](Graph& g, Var, std::span<const float> go) {
                    auto gx = g.grad_sink(x);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
                    auto gb = g.grad_sink(bias);
                    if (gb.empty()) return;
                    std::vector<double> acc(cols, 0.0);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c) acc[c] += go[r * cols + c];
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += static_cast<float>(acc[c]);
                  });
}

Var sum(Var x) {
  const auto& xv = x.value().data;
  const double s = kernels::sum(xv.data(), xv.size());
  return x.graph().record("sum", Tensor::scalar(static_cast<float>(s)), {x},
                          [x](Graph& g, Var, std::span<const float> go) {
                            auto gx = g.grad_sink(x);
                            for (float& v : gx) v += go[0];
                          });
}

Var mean(Var x) {
  const auto& xv = x.value().data;
  const double n = static_cast<double>(xv.size());
  const double s = kernels::sum(xv.data(), xv.size()) / n;
  return x.graph().record("mean", Tensor::scalar(static_cast<float>(s)), {x},
                          [x, n](Graph& g, Var, std::span<const float> go) {
                            auto gx = g.grad_sink(x);
                            const float d = static_cast<float>(go[0] / n);
                            for (float& v : gx) v += d;
                          });
}

Var mean_axis(Var x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw DimensionError("mean_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != axis) os.push_back(s[i]);
  Tensor out(os);
  const auto& xv = x.value().data;
  std::vector<double> acc(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t a = 0; a < len; ++a)
      for (std::size_t i = 0; i < inner; ++i) acc[i] += xv[(o * len + a) * inner + i];
    for (std::size_t i = 0; i < inner; ++i) out.data[o * inner + i] = static_cast<float>(acc[i] / len);
  }
  return x.graph().record("mean_axis", std::move(out), {x},
                          [x, outer, inner, len](Graph& g, Var, std::span<const float> go) {
                            auto gx = g.grad_sink(x);
                            const float inv = 1.0f / static_cast<float>(len);
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t a = 0; a < len; ++a)
                                for (std::size_t i = 0; i < inner; ++i)
                                  gx[(o * len + a) * inner + i] += go[o * inner + i] * inv;
                          });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph().record("reshape", std::move(out), {x}, [x](Graph& g, Var, std::span<const float> go) {
    auto gx = g.grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

namespace {

// dst[perm(i)] (+)= src[i] for an axis swap. Iterates the destination in
// row-major order with an odometer over the source strides.
void swap_axes_copy(const float* src, const Shape& in_shape, int a0, int a1, float* dst, bool add) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (int i = static_cast<int>(rank) - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  Shape out_shape = in_shape;
  std::swap(out_shape[a0], out_shape[a1]);
  std::vector<std::size_t> step = in_stride;  // source stride for each destination axis
  std::swap(step[a0], step[a1]);
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::int64_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (add)
      dst[i] += src[off];
    else
      dst[i] = src[off];
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      if (++idx[d] < out_shape[d]) {
        off += step[d];
        break;
      }
      off -= step[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
}

}  // namespace

Var transpose(Var x, int axis0, int axis1) {
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  if (axis0 < 0) axis0 += rank;
  if (axis1 < 0) axis1 += rank;
  if (axis0 < 0 || axis1 < 0 || axis0 >= rank || axis1 >= rank)
    throw DimensionError("transpose: axes out of range for " + shape_str(s));
  Shape os = s;
  std::swap(os[axis0], os[axis1]);
  Tensor out(os);
  swap_axes_copy(x.value().data.data(), s, axis0, axis1, out.data.data(), false);
  return x.graph().record("transpose", std::move(out), {x},
                          [x, os, axis0, axis1](Graph& g, Var, std::span<const float> go) {
                            auto gx = g.grad_sink(x);
                            swap_axes_copy(go.data(), os, axis0, axis1, gx.data(), true);
                          });
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)), n = static_cast<int>(b.dim(1));
  Tensor out(Shape{m, n});
  kernels::gemm(false, false, m, n, k, a.value().data.data(), b.value().data.data(), out.data.data(), false);
  return g.record("matmul", std::move(out), {a, b}, [a, b, m, n, k](Graph& g, Var, std::span<const float> go) {
    auto ga = g.grad_sink(a);
    if (!ga.empty()) kernels::gemm(false, true, m, k, n, go.data(), b.value().data.data(), ga.data(), true);
    auto gb = g.grad_sink(b);
    if (!gb.empty()) kernels::gemm(true, false, k, n, m, a.value().data.data(), go.data(), gb.data(), true);
  });
}

Var bmm(Var a, Var b, bool trans_b) {
  Graph& g = same_graph(a, b);
  require_rank("bmm", a, 3);
  require_rank("bmm", b, 3);
  const int batch = static_cast<int>(a.dim(0)), m = static_cast<int>(a.dim(1)), k = static_cast<int>(a.dim(2));
  const int n = static_cast<int>(trans_b ? b.dim(1) : b.dim(2));
  const int bk = static_cast<int>(trans_b ? b.dim(2) : b.dim(1));
  if (b.dim(0) != batch || bk != k)
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  Tensor out(Shape{batch, m, n});
  const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                    so = static_cast<std::size_t>(m) * n;
  for (int i = 0; i < batch; ++i)
    kernels::gemm(false, trans_b, m, n, k, a.value().data.data() + i * sa, b.value().data.data() + i * sb,
                  out.data.data() + i * so, false);
  return g.record("bmm", std::move(out), {a, b},
                  [a, b, trans_b, batch, m, n, k, sa, sb, so](Graph& g, Var, std::span<const float> go) {
                    auto ga = g.grad_sink(a);
                    auto gb = g.grad_sink(b);
                    const float* av = a.value().data.data();
                    const float* bv = b.value().data.data();
                    for (int i = 0; i < batch; ++i) {
                      const float* goi = go.data() + i * so;
                      if (!ga.empty())  // ga = go · op(b)ᵀ
                        kernels::gemm(false, !trans_b, m, k, n, goi, bv + i * sb, ga.data() + i * sa, true);
                      if (gb.empty()) continue;
                      if (trans_b)  // gb[n×k] = goᵀ · a
                        kernels::gemm(true, false, n, k, m, goi, av + i * sa, gb.data() + i * sb, true);
                      else  // gb[k×n] = aᵀ · go
                        kernels::gemm(true, false, k, n, m, av + i * sa, goi, gb.data() + i * sb, true);
                    }
                  });
}

Var linear(Var x, Var weight, Var bias) {
  Graph& g = same_graph(x, weight);
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const int rows = static_cast<int>(x.dim(0)), in = static_cast<int>(x.dim(1)), out_f = static_cast<int>(weight.dim(0));
  if (weight.dim(1) != in)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  if (bias.valid() && bias.shape() != Shape{out_f})
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(weight.shape()));
  Tensor out(Shape{rows, out_f});
  kernels::gemm(false, true, rows, out_f, in, x.value().data.data(), weight.value().data.data(), out.data.data(), false);
  if (bias.valid()) {
    const auto& bv = bias.value().data;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < out_f; ++c) out.data[static_cast<std::size_t>(r) * out_f + c] += bv[c];
  }
  std::vector<Var> inputs{x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return g.record("linear", std::move(out), inputs,
                  [x, weight, bias, rows, in, out_f](Graph& g, Var, std::span<const float> go) {
                    auto gx = g.grad_sink(x);
                    if (!gx.empty())
                      kernels::gemm(false, false, rows, in, out_f, go.data(), weight.value().data.data(), gx.data(), true);
                    auto gw = g.grad_sink(weight);
                    if (!gw.empty())
                      kernels::gemm(true, false, out_f, in, rows, go.data(), x.value().data.data(), gw.data(), true);
                    if (!bias.valid()) return;
                    auto gb = g.grad_sink(bias);
                    if (gb.empty()) return;
                    std::vector<double> acc(out_f, 0.0);
                    for (int r = 0; r < rows; ++r)
                      for (int c = 0; c < out_f; ++c) acc[c] += go[static_cast<std::size_t>(r) * out_f + c];
                    for (int c = 0; c < out_f; ++c) gb[c] += static_cast<float>(acc[c]);
                  });
}

Var softmax(Var x) {
  const auto [rows, cols] = rows_cols(x.shape());
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = out.data.data() + r * cols;
    const float mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
    for (std::size_t c = 0; c < cols; ++c)
      row[c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - mx) / z);
  }
  return x.graph().record("softmax", std::move(out), {x},
                          [x, rows, cols](Graph& g, Var self, std::span<const float> go) {
                            auto gx = g.grad_sink(x);
                            const auto& y = self.value().data;
                            for (std::size_t r = 0; r < rows; ++r) {
                              const std::size_t o = r * cols;
                              const double d = kernels::dot(go.data() + o, y.data() + o, cols);
                              for (std::size_t c = 0; c < cols; ++c)
                                gx[o + c] += static_cast<float>(y[o + c] * (go[o + c] - d));
                            }
                          });
}

Var l2_normalize(Var x, NormalizeInfo* info, float eps) {
  const auto [rows, cols] = rows_cols(x.shape());
  Tensor out = x.value();
  std::vector<float> denom(rows);
  std::vector<std::uint8_t> clamped(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = out.data.data() + r * cols;
    const double norm = std::sqrt(kernels::dot(row, row, cols));
    double d = norm;
    if (!(norm > eps)) {
      d = eps;
      clamped[r] = 1;
      if (info) info->clamped_rows.push_back(r);
    }
    denom[r] = static_cast<float>(d);
    for (std::size_t c = 0; c < cols; ++c) row[c] = static_cast<float>(row[c] / d);
  }
  return x.graph().record(
      "l2_normalize", std::move(out), {x},
      [x, rows, cols, denom = std::move(denom), clamped = std::move(clamped)](Graph& g, Var self,
                                                                             std::span<const float> go) {
        auto gx = g.grad_sink(x);
        const auto& y = self.value().data;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t o = r * cols;
          const double d = clamped[r] ? 0.0 : kernels::dot(go.data() + o, y.data() + o, cols);
          for (std::size_t c = 0; c < cols; ++c)
            gx[o + c] += static_cast<float>((go[o + c] - y[o + c] * d) / denom[r]);
        }
      });
}

Var conv2d(Var input, Var kernel, int stride, int padding) {
  Graph& g = same_graph(input, kernel);
  require_rank("conv2d", input, 4);
  require_rank("conv2d", kernel, 4);
  const int B = static_cast<int>(input.dim(0)), C = static_cast<int>(input.dim(1)),
            H = static_cast<int>(input.dim(2)), W = static_cast<int>(input.dim(3));
  const int F = static_cast<int>(kernel.dim(0)), kh = static_cast<int>(kernel.dim(2)),
            kw = static_cast<int>(kernel.dim(3));
  if (kernel.dim(1) != C)
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " vs kernel " + shape_str(kernel.shape()));
  if (stride < 1 || padding < 0) throw ContractError("conv2d: stride must be >= 1 and padding >= 0");
  if (H + 2 * padding < kh || W + 2 * padding < kw)
    throw DimensionError("conv2d: non-positive output size for input " + shape_str(input.shape()) +
                         " and kernel " + shape_str(kernel.shape()));
  const int Ho = (H + 2 * padding - kh) / stride + 1, Wo = (W + 2 * padding - kw) / stride + 1;
  const int P = Ho * Wo, CKK = C * kh * kw;
  const bool direct = kh == 1 && kw == 1 && stride == 1 && padding == 0;
  Tensor out(Shape{B, F, Ho, Wo});
  std::vector<float> col(direct ? 0 : static_cast<std::size_t>(CKK) * P);
  const std::size_t in_stride = static_cast<std::size_t>(C) * H * W, out_stride = static_cast<std::size_t>(F) * P;
  for (int b = 0; b < B; ++b) {
    const float* img = input.value().data.data() + b * in_stride;
    const float* cols = img;
    if (!direct) {
      kernels::im2col(img, C, H, W, kh, kw, stride, padding, Ho, Wo, col.data());
      cols = col.data();
    }
    kernels::gemm(false, false, F, P, CKK, kernel.value().data.data(), cols, out.data.data() + b * out_stride, false);
  }
  return g.record(
      "conv2d", std::move(out), {input, kernel},
      [=](Graph& g, Var, std::span<const float> go) {
        auto gi = g.grad_sink(input);
        auto gk = g.grad_sink(kernel);
        std::vector<float> col(direct ? 0 : static_cast<std::size_t>(CKK) * P);
        std::vector<float> dcol(gi.empty() || direct ? 0 : static_cast<std::size_t>(CKK) * P);
        const float* kv = kernel.value().data.data();
        for (int b = 0; b < B; ++b) {
          const float* gob = go.data() + b * out_stride;
          if (!gk.empty()) {
            const float* img = input.value().data.data() + b * in_stride;
            const float* cols = img;
            if (!direct) {
              kernels::im2col(img, C, H, W, kh, kw, stride, padding, Ho, Wo, col.data());
              cols = col.data();
            }
            kernels::gemm(false, true, F, CKK, P, gob, cols, gk.data(), true);
          }
          if (!gi.empty()) {
            float* gib = gi.data() + b * in_stride;
            if (direct) {
              kernels::gemm(true, false, CKK, P, F, kv, gob, gib, true);
            } else {
              kernels::gemm(true, false, CKK, P, F, kv, gob, dcol.data(), false);
              kernels::col2im(dcol.data(), C, H, W, kh, kw, stride, padding, Ho, Wo, gib);
            }
          }
        }
      });
}

Var max_pool2d(Var input, int window, int stride, int padding) {
  require_rank("max_pool2d", input, 4);
  const int B = static_cast<int>(input.dim(0)), C = static_cast<int>(input.dim(1)),
            H = static_cast<int>(input.dim(2)), W = static_cast<int>(input.dim(3));
  if (H + 2 * padding < window || W + 2 * padding < window)
    throw DimensionError("max_pool2d: window larger than padded input " + shape_str(input.shape()));
  const int Ho = (H + 2 * padding - window) / stride + 1, Wo = (W + 2 * padding - window) / stride + 1;
  Tensor out(Shape{B, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
  const auto& xv = input.value().data;
  std::size_t o = 0;
  for (int bc = 0; bc < B * C; ++bc) {
    const std::size_t base = static_cast<std::size_t>(bc) * H * W;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t at = -1;
        for (int ky = 0; ky < window; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < window; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= W) continue;
            const float v = xv[base + static_cast<std::size_t>(iy) * W + ix];
            if (at < 0 || v > best || v != v) {
              best = v;
              at = iy * W + ix;
            }
          }
        }
        out.data[o] = best;
        (*argmax)[o] = static_cast<std::int32_t>(at);
      }
  }
  const std::size_t plane_out = static_cast<std::size_t>(Ho) * Wo, plane_in = static_cast<std::size_t>(H) * W;
  return input.graph().record("max_pool2d", std::move(out), {input},
                              [input, argmax, plane_out, plane_in](Graph& g, Var, std::span<const float> go) {
                                auto gi = g.grad_sink(input);
                                for (std::size_t i = 0; i < go.size(); ++i) {
                                  const std::size_t bc = i / plane_out;
                                  gi[bc * plane_in + (*argmax)[i]] += go[i];
                                }
                              });
}

Var global_avg_pool(Var input) {
  require_rank("global_avg_pool", input, 4);
  const std::size_t BC = input.dim(0) * input.dim(1), HW = input.dim(2) * input.dim(3);
  Tensor out(Shape{input.dim(0), input.dim(1)});
  const auto& xv = input.value().data;
  for (std::size_t i = 0; i < BC; ++i) out.data[i] = static_cast<float>(kernels::sum(xv.data() + i * HW, HW) / HW);
  return input.graph().record("global_avg_pool", std::move(out), {input},
                              [input, BC, HW](Graph& g, Var, std::span<const float> go) {
                                auto gi = g.grad_sink(input);
                                for (std::size_t i = 0; i < BC; ++i) {
                                  const float d = go[i] / static_cast<float>(HW);
                                  for (std::size_t j = 0; j < HW; ++j) gi[i * HW + j] += d;
                                }
                              });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState state, bool train) {
  Graph& g = same_graph(x, gamma);
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 4) throw DimensionError("batch_norm: expected [N×C] or [B×C×H×W], got " + shape_str(s));
  const std::size_t N = s[0], C = s[1], inner = s.size() == 4 ? s[2] * s[3] : 1;
  if (gamma.shape() != Shape{static_cast<std::int64_t>(C)} || beta.shape() != gamma.shape())
    throw DimensionError("batch_norm: affine parameters do not match channels of " + shape_str(s));
  const std::size_t count = N * inner;
  const auto& xv = x.value().data;
  std::vector<double> mu(C), invstd(C);
  if (train) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t n = 0; n < N; ++n) m += kernels::sum(xv.data() + (n * C + c) * inner, inner);
      m /= count;
      double v = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const float* p = xv.data() + (n * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= count;
      mu[c] = m;
      invstd[c] = 1.0 / std::sqrt(v + state.eps);
      if (state.running_mean && state.running_var) {
        const double unbiased = count > 1 ? v * count / (count - 1) : v;
        float& rm = state.running_mean->data.at(c);
        float& rv = state.running_var->data.at(c);
        rm = static_cast<float>((1.0 - state.momentum) * rm + state.momentum * m);
        rv = static_cast<float>((1.0 - state.momentum) * rv + state.momentum * unbiased);
      }
    }
  } else {
    if (!state.running_mean || !state.running_var)
      throw ContractError("batch_norm: eval mode requires running statistics");
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = state.running_mean->data.at(c);
      invstd[c] = 1.0 / std::sqrt(static_cast<double>(state.running_var->data.at(c)) + state.eps);
    }
  }
  Tensor out(s);
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t o = (n * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i)
        out.data[o + i] = static_cast<float>((xv[o + i] - mu[c]) * invstd[c] * gv[c] + bv[c]);
    }
  return g.record("batch_norm", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, N, C, inner, count, train, mu = std::move(mu), invstd = std::move(invstd)](
                      Graph& g, Var, std::span<const float> go) {
                    const auto& xv = x.value().data;
                    const auto& gv = gamma.value().data;
                    auto gx = g.grad_sink(x);
                    auto gg = g.grad_sink(gamma);
                    auto gb = g.grad_sink(beta);
                    for (std::size_t c = 0; c < C; ++c) {
                      double sg = 0.0, sgx = 0.0;
                      for (std::size_t n = 0; n < N; ++n) {
                        const std::size_t o = (n * C + c) * inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                          const double xh = (xv[o + i] - mu[c]) * invstd[c];
                          sg += go[o + i];
                          sgx += go[o + i] * xh;
                        }
                      }
                      if (!gg.empty()) gg[c] += static_cast<float>(sgx);
                      if (!gb.empty()) gb[c] += static_cast<float>(sg);
                      if (gx.empty()) continue;
                      const double k = gv[c] * invstd[c];
                      for (std::size_t n = 0; n < N; ++n) {
                        const std::size_t o = (n * C + c) * inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                          if (train) {
                            const double xh = (xv[o + i] - mu[c]) * invstd[c];
                            gx[o + i] += static_cast<float>(k * (go[o + i] - sg / count - xh * sgx / count));
                          } else {
                            gx[o + i] += static_cast<float>(k * go[o + i]);
                          }
                        }
                      }
                    }
                  });
}

Var layer_norm(Var x, Var gamma, Var beta, float eps) {
  Graph& g = same_graph(x, gamma);
  const auto [rows, cols] = rows_cols(x.shape());
  if (gamma.shape() != Shape{static_cast<std::int64_t>(cols)} || beta.shape() != gamma.shape())
    throw DimensionError("layer_norm: affine parameters do not match " + shape_str(x.shape()));
  const auto& xv = x.value().data;
  std::vector<double> mu(rows), invstd(rows);
  Tensor out(x.shape());
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* p = xv.data() + r * cols;
    const double m = kernels::sum(p, cols) / cols;
    double v = 0.0;
    for (std::size_t c = 0; c < cols; ++c) v += (p[c] - m) * (p[c] - m);
    v /= cols;
    mu[r] = m;
    invstd[r] = 1.0 / std::sqrt(v + eps);
    for (std::size_t c = 0; c < cols; ++c)
      out.data[r * cols + c] = static_cast<float>((p[c] - m) * invstd[r] * gv[c] + bv[c]);
  }
  return g.record("layer_norm", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, rows, cols, mu = std::move(mu), invstd = std::move(invstd)](
                      Graph& g, Var, std::span<const float> go) {
                    const auto& xv = x.value().data;
                    const auto& gv = gamma.value().data;
                    auto gx = g.grad_sink(x);
                    auto gg = g.grad_sink(gamma);
                    auto gb = g.grad_sink(beta);
                    std::vector<double> accg(cols, 0.0), accb(cols, 0.0);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const std::size_t o = r * cols;
                      double s1 = 0.0, s2 = 0.0;  // Σ γ·g and Σ γ·g·x̂ over the row
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double xh = (xv[o + c] - mu[r]) * invstd[r];
                        const double gy = go[o + c];
                        accg[c] += gy * xh;
                        accb[c] += gy;
                        s1 += gy * gv[c];
                        s2 += gy * gv[c] * xh;
                      }
                      if (gx.empty()) continue;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double xh = (xv[o + c] - mu[r]) * invstd[r];
                        gx[o + c] += static_cast<float>(invstd[r] * (go[o + c] * gv[c] - s1 / cols - xh * s2 / cols));
                      }
                    }
                    for (std::size_t c = 0; c < cols; ++c) {
                      if (!gg.empty()) gg[c] += static_cast<float>(accg[c]);
                      if (!gb.empty()) gb[c] += static_cast<float>(accb[c]);
                    }
                  });
}

Var standardize_columns(Var x, float eps) {
  require_rank("standardize_columns", x, 2);
  const std::size_t N = x.dim(0), D = x.dim(1);
  const auto& xv = x.value().data;
  std::vector<double> mu(D, 0.0), sd(D, 0.0);
  std::vector<std::uint8_t> clamped(D, 0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) mu[d] += xv[n * D + d];
  for (auto& m : mu) m /= N;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) sd[d] += (xv[n * D + d] - mu[d]) * (xv[n * D + d] - mu[d]);
  for (std::size_t d = 0; d < D; ++d) {
    sd[d] = std::sqrt(sd[d] / N);
    if (!(sd[d] >= eps)) {
      sd[d] = eps;
      clamped[d] = 1;
    }
  }
  Tensor out(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) out.data[n * D + d] = static_cast<float>((xv[n * D + d] - mu[d]) / sd[d]);
  return x.graph().record(
      "standardize_columns", std::move(out), {x},
      [x, N, D, sd = std::move(sd), clamped = std::move(clamped)](Graph& g, Var self, std::span<const float> go) {
        auto gx = g.grad_sink(x);
        const auto& y = self.value().data;
        for (std::size_t d = 0; d < D; ++d) {
          double sg = 0.0, sgy = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            sg += go[n * D + d];
            sgy += go[n * D + d] * y[n * D + d];
          }
          if (clamped[d]) sgy = 0.0;
          for (std::size_t n = 0; n < N; ++n)
            gx[n * D + d] += static_cast<float>((go[n * D + d] - sg / N - y[n * D + d] * sgy / N) / sd[d]);
        }
      });
}

Var patchify(Var input, int patch) {
  require_rank("patchify", input, 4);
  const int B = static_cast<int>(input.dim(0)), C = static_cast<int>(input.dim(1)),
            H = static_cast<int>(input.dim(2)), W = static_cast<int>(input.dim(3));
  if (patch < 1 || H % patch != 0 || W % patch != 0)
    throw DimensionError("patchify: " + shape_str(input.shape()) + " not divisible by patch " + std::to_string(patch));
  const int ty = H / patch, tx = W / patch, T = ty * tx, F = C * patch * patch;
  Tensor out(Shape{B, T, F});
  // out index -> in index map, shared with backward.
  auto map = std::make_shared<std::vector<std::uint32_t>>(static_cast<std::size_t>(T) * F);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c)
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx) {
          const int y = (t / tx) * patch + dy, x = (t % tx) * patch + dx;
          (*map)[static_cast<std::size_t>(t) * F + (c * patch + dy) * patch + dx] =
              static_cast<std::uint32_t>((c * H + y) * W + x);
        }
  const std::size_t in_stride = static_cast<std::size_t>(C) * H * W, out_stride = static_cast<std::size_t>(T) * F;
  const auto& xv = input.value().data;
  for (int b = 0; b < B; ++b)
    for (std::size_t i = 0; i < out_stride; ++i) out.data[b * out_stride + i] = xv[b * in_stride + (*map)[i]];
  return input.graph().record("patchify", std::move(out), {input},
                              [input, map, B, in_stride, out_stride](Graph& g, Var, std::span<const float> go) {
                                auto gi = g.grad_sink(input);
                                for (int b = 0; b < B; ++b)
                                  for (std::size_t i = 0; i < out_stride; ++i)
                                    gi[b * in_stride + (*map)[i]] += go[b * out_stride + i];
                              });
}

Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& exclude) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (targets.size() != N) throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                                                " targets for " + std::to_string(N) + " rows");
  if (!exclude.empty() && exclude.size() != N * C) throw DimensionError("cross_entropy: exclusion mask size mismatch");
  const auto& z = logits.value().data;
  auto probs = std::make_shared<std::vector<double>>(N * C, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < N; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= C || (!exclude.empty() && exclude[r * C + t]))
      throw ContractError("cross_entropy: invalid target " + std::to_string(t) + " in row " + std::to_string(r));
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c)
      if (exclude.empty() || !exclude[r * C + c]) mx = std::max(mx, static_cast<double>(z[r * C + c]));
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c)
      if (exclude.empty() || !exclude[r * C + c]) s += std::exp(z[r * C + c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < C; ++c)
      if (exclude.empty() || !exclude[r * C + c]) (*probs)[r * C + c] = std::exp(z[r * C + c] - lse);
    total += lse - z[r * C + t];
  }
  return logits.graph().record("cross_entropy", Tensor::scalar(static_cast<float>(total / N)), {logits},
                               [logits, targets, probs, N, C](Graph& g, Var, std::span<const float> go) {
                                 auto gl = g.grad_sink(logits);
                                 const double k = go[0] / static_cast<double>(N);
                                 for (std::size_t r = 0; r < N; ++r)
                                   for (std::size_t c = 0; c < C; ++c) {
                                     double d = (*probs)[r * C + c];
                                     if (static_cast<int>(c) == targets[r]) d -= 1.0;
                                     gl[r * C + c] += static_cast<float>(k * d);
                                   }
                               });
}

Var attention(Var q, Var k, Var v, int heads) {
  require_rank("attention", q, 3);
  require_same_shape("attention", q, k);
  require_same_shape("attention", q, v);
  const std::int64_t B = q.dim(0), T = q.dim(1), D = q.dim(2);
  if (heads < 1 || D % heads != 0)
    throw DimensionError("attention: width " + std::to_string(D) + " not divisible by " + std::to_string(heads) + " heads");
  const std::int64_t dh = D / heads;
  auto split = [&](Var x) {
    return reshape(transpose(reshape(x, {B, T, heads, dh}), 1, 2), {B * heads, T, dh});
  };
  Var scores = scale(bmm(split(q), split(k), true), 1.0f / std::sqrt(static_cast<float>(dh)));
  Var mixed = bmm(softmax(scores), split(v));
  return reshape(transpose(reshape(mixed, {B, heads, T, dh}), 1, 2), {B, T, D});
}

}  // namespace ops
}  // namespace fssuavl
