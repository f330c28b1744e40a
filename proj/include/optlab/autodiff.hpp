#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "optlab/rng.hpp"
#include "optlab/tensor.hpp"

namespace optlab {

enum class OpKind {
  leaf,
  matmul,
  add,
  mul,
  scale,
  relu,
  tanh,
  softmax,
  layer_norm,
  embedding_lookup,
  dropout_mask,
  cross_entropy,
  reshape,
  transpose,
  mean,
  sum,
};

std::string_view to_string(OpKind op);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Receives the output adjoint and scatters it into the inputs' adjoints.
using BackwardFn = std::function<void(Graph&, std::span<const double> out_grad)>;

struct GraphNode {
  OpKind op = OpKind::leaf;
  std::vector<std::size_t> inputs;
  Tensor output;
  BackwardFn backward;
  Tensor* parameter = nullptr;  // external leaf that receives gradients
  bool needs_grad = false;
};

/// Define-by-run tape. Each op evaluates eagerly when it is recorded, so a
/// node's output is available as soon as the node exists; node ids are a
/// topological order by construction.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that does not take part in differentiation.
  Var constant(Tensor value);
  /// Leaf bound to an external tensor; backward() accumulates into its grad.
  /// The tensor must outlive the graph.
  Var parameter(Tensor& tensor);

  const GraphNode& node(Var v) const;
  const Tensor& eval(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Gradients are added to the bound
  /// parameter tensors, so calling twice without zeroing doubles them.
  /// Returns the parameters that received a gradient.
  std::vector<Tensor*> backward(Var loss);

  /// Frees intermediate values; any later backward() raises GraphConsumed.
  void release();
  bool consumed() const noexcept { return consumed_; }

  // Used by op implementations.
  Var record(OpKind op, std::vector<std::size_t> inputs, Tensor output, BackwardFn backward);
  std::span<double> adjoint(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

 private:
  std::vector<GraphNode> nodes_;
  std::vector<std::vector<double>> adjoints_;
  bool consumed_ = false;
};

namespace ops {

/// [M,K]x[K,N] or batched [B,M,K]x[B,K,N].
Var matmul(Var a, Var b);
/// Elementwise sum; `b` may broadcast when its shape is a suffix of `a`'s.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var tanh(Var a);
/// Softmax over the last axis. With `causal`, the last two axes must form a
/// square [T,T] block and entry (i,j) with j > i gets zero probability.
Var softmax(Var a, bool causal = false);
/// Normalizes over the last axis: gain * (x - mean) / sqrt(var + eps) + bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Rows of `table` [V,D] selected by `ids`; output [ids.size(), D].
Var embedding_lookup(Var table, std::span<const std::uint32_t> ids);
/// Inverted dropout; the mask is drawn from `rng` and kept for backward.
Var dropout(Var a, double p, RngStream& rng);
/// Mean over rows of -log softmax(logits)[target]; logits [N,V].
Var cross_entropy(Var logits, std::span<const std::uint32_t> targets);
Var reshape(Var a, Shape shape);
/// Axis permutation: output axis i is input axis perm[i].
Var transpose(Var a, std::vector<std::size_t> perm);
Var mean(Var a);
Var sum(Var a);

}  // namespace ops

struct CheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  /// Coordinates whose one-sided differences disagree at every probe scale.
  std::vector<std::size_t> kinks;
  bool passed = false;
};

using ScalarBuilder = std::function<Var(Graph&, Var)>;

/// Compares the reverse-mode gradient of `f` at `x` with central finite
/// differences, step 1e-5 * max(1, |x_i|) per coordinate. A coordinate also
/// fails if the function has a kink there (one-sided slopes that do not
/// converge as the step shrinks).
CheckReport grad_check(const ScalarBuilder& f, const Tensor& x, double rel_tol);

}  // namespace optlab
