#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fssuavl/tensor.hpp"

namespace fssuavl {

class Graph;

// Handle to a node recorded in a Graph. Cheap to copy; only valid while the
// owning graph is alive.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::int64_t dim(std::size_t i) const { return value().shape.at(i); }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Tape of operations in creation order. Creation order is a topological order,
// so backward() is a single reverse sweep. A graph is built once, then
// differentiated at most once.
class Graph {
 public:
  // Receives the node itself and the gradient flowing into its output.
  using BackwardFn = std::function<void(Graph&, Var out, std::span<const float> grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Reverse-mode sweep from a scalar loss. d(loss)/d(loss) = 1.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }
  // Zero tensor when nothing flowed into the node.
  Tensor grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(Var v) const { return nodes_[check(v)].op; }

  // Op-implementor interface. `fn` may be empty when no input needs grads.
  Var record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);
  // Lazily allocated zero-initialized gradient buffer of `v`, or an empty span
  // when `v` does not require grad.
  std::span<float> grad_sink(Var v);
  Var handle(int id) { return Var(this, id); }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<int> inputs;
    bool requires_grad = false;
    std::vector<float> grad;
    BackwardFn backward;
  };

  int check(Var v) const;

  std::vector<Node> nodes_;
  bool differentiated_ = false;
};

// Metadata returned by l2_normalize.
struct NormalizeInfo {
  std::vector<std::size_t> clamped_rows;  // rows whose norm fell below eps
};

namespace ops {

inline constexpr float kNormEps = 1e-12f;

// Elementwise (identical shapes).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var add_scalar(Var a, float s);
Var relu(Var x);
Var gelu(Var x);  // exact erf form

// x[..×n] + bias[n]
Var add_bias(Var x, Var bias);

// Reductions to a scalar; f64 accumulation in index order.
Var sum(Var x);
Var mean(Var x);
// Mean over one axis (the axis is removed).
Var mean_axis(Var x, int axis);

Var reshape(Var x, Shape shape);
// Swaps two axes of any-rank tensor.
Var transpose(Var x, int axis0, int axis1);

// a[m×k] · b[k×n]
Var matmul(Var a, Var b);
// Batched: a[N×m×k] · b[N×k×n], or b[N×n×k] transposed when trans_b.
Var bmm(Var a, Var b, bool trans_b = false);
// x[N×in] · Wᵀ + b, W[out×in]. `bias` may be invalid (no bias).
Var linear(Var x, Var weight, Var bias);

// Softmax over the last axis with max subtraction.
Var softmax(Var x);
// Row-wise (last axis) division by max(norm, eps).
Var l2_normalize(Var x, NormalizeInfo* info = nullptr, float eps = kNormEps);

// input[B×C×H×W], kernel[F×C×kh×kw]; cross-correlation.
Var conv2d(Var input, Var kernel, int stride, int padding);
Var max_pool2d(Var input, int window, int stride, int padding);
// [B×C×H×W] -> [B×C]
Var global_avg_pool(Var input);

// Normalizes per channel: axis 1 of [N×C] or [B×C×H×W]. In train mode the
// batch statistics are used and the running buffers (if given) are updated
// with `momentum`; otherwise the running buffers are used.
struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  float momentum = 0.1f;
  float eps = 1e-5f;
};
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState state, bool train);

// Normalizes over the last axis.
Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);

// Per-column standardization of x[N×D] with population variance; the standard
// deviation is clamped below at eps.
Var standardize_columns(Var x, float eps);

// [B×C×H×W] -> [B×(H/p)(W/p)×(C·p·p)], patches in row-major order.
Var patchify(Var input, int patch);

// Mean over rows of -log softmax(logits)[target]. Entries where exclude is
// non-zero ([N×C], may be empty) are left out of the normalizer.
Var cross_entropy(Var logits, const std::vector<int>& targets,
                  const std::vector<std::uint8_t>& exclude = {});

// Multi-head scaled dot-product attention over q, k, v [B×T×D]:
// concat_h softmax(Q_h K_hᵀ/√(D/h)) V_h, output [B×T×D].
Var attention(Var q, Var k, Var v, int heads);

}  // namespace ops
}  // namespace fssuavl
