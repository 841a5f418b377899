#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rvsl/tensor.hpp"

namespace rvsl::ad {

/// Named, persistently owned tensor. Trainable parameters are bound into a
/// graph as differentiable leaves; non-trainable ones (batch-norm running
/// statistics, metadata) are state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad();
};

enum class Op : std::uint8_t {
  input,
  conv2d,
  conv2d_transpose,
  batch_norm,
  relu,
  global_avg_pool,
  dense,
  concat_channels,
  concat_batch,
  add,
  sub,
  mul,
  mul_scalar,
  add_scalar,
  abs,
  sum,
  mean,
  l2_normalize,
  exp,
  log,
  softmax,
  log_softmax,
  sigmoid,
  min_reduce,
  clamp,
  clamp_stopgrad,
  slice,
  gather,
  pairwise_distance,
};

std::string_view op_name(Op op) noexcept;

enum class MinAxis : std::uint8_t {
  channel,  ///< min over axis -3 (C of NxCxHxW or CxHxW), drops that axis
  window,   ///< min over a patch x patch window on the last two axes
};

/// Running statistics updated by train-mode batch norm.
struct BatchNormStats {
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
};

/// Per-op attributes. Each op reads only the fields it documents.
struct Attrs {
  // conv2d / conv2d_transpose; kernel size comes from the weight shape.
  std::size_t stride = 1;
  std::size_t padding = 0;
  // batch_norm
  double epsilon = 1e-5;
  double momentum = 0.9;
  bool training = true;
  BatchNormStats stats;
  // mul_scalar / add_scalar
  double scalar = 0.0;
  // clamp / clamp_stopgrad
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  // sum / mean / l2_normalize: -1 reduces everything to a scalar.
  int axis = -1;
  // min_reduce
  MinAxis min_axis = MinAxis::channel;
  std::size_t patch = 1;
  // slice: [row0, row1) x [col0, col1) on the last two axes.
  std::size_t row0 = 0, row1 = 0, col0 = 0, col1 = 0;
  // gather: flat indices into the input.
  std::vector<std::size_t> indices;
};

struct Node {
  std::size_t id = 0;
  Op kind = Op::input;
  std::vector<std::size_t> inputs;
  Attrs attrs;
  Tensor value;
  Tensor grad;
  Parameter* param = nullptr;
  bool requires_grad = false;
  std::string tag;
  // Forward-time caches consumed by backward.
  std::vector<std::size_t> argmin;
  Tensor cache;
  Tensor cache2;
};

class Graph;

/// Handle to a node of a graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const;
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Eager tape for reverse-mode differentiation. Nodes are appended in
/// construction order, so every input id precedes its consumer and the tape
/// is acyclic by construction. Values are computed when a node is built.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant or differentiable leaf holding `value`.
  Var input(Tensor value, bool requires_grad = false, std::string tag = {});
  Var constant(Tensor value) { return input(std::move(value), false); }
  /// Leaf bound to `p`. One leaf per parameter per graph; a frozen binding
  /// (trainable == false) acts as a constant.
  Var param(Parameter& p, bool trainable = true);

  /// Generic constructor: validates the shape rule for `kind`, computes the
  /// value and appends the node.
  Var build_node(Op kind, const std::vector<Var>& inputs, Attrs attrs = {});

  /// Reverse sweep from a scalar root. Fills `grad` on every node that
  /// requires it; previous gradients are discarded.
  void backward(Var root);

  /// Adds leaf gradients into their bound Parameter::grad.
  void accumulate_param_grads();

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  Node& node(std::size_t id) { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& grad(Var v) const;

  /// Trainable parameters bound into this graph, in binding order.
  std::vector<Parameter*> bound_parameters() const;

  /// Hash of every discrete decision taken during the forward pass (relu
  /// signs, argmin positions, clamp regions, gather indices, constants).
  /// Two evaluations with equal signatures lie on the same smooth piece.
  std::uint64_t kink_signature() const;

  /// Id of the first node whose value is not finite, or size() if none.
  std::size_t first_non_finite() const;

  void set_tag(Var v, std::string tag) { nodes_.at(v.id()).tag = std::move(tag); }

 private:
  void forward(Node& n);
  void backward_node(Node& n);
  Tensor& grad_slot(std::size_t id);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_leaf_;
};

// Typed builders. All take/return Vars of the same graph.

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding);
Var conv2d_transpose(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding);
Var batch_norm(Var x, Var gamma, Var beta, bool training, BatchNormStats stats = {},
               double epsilon = 1e-5, double momentum = 0.9);
Var relu(Var x);
Var global_avg_pool(Var x);
Var dense(Var x, Var weight, Var bias);
Var concat_channels(Var a, Var b);
/// Stacks along axis 0; trailing dimensions must agree.
Var concat_batch(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul_scalar(Var x, double s);
Var add_scalar(Var x, double s);
Var abs(Var x);
Var sum(Var x, int axis = -1);
Var mean(Var x, int axis = -1);
Var l2_normalize(Var x, int axis, double epsilon = 1e-12);
Var exp(Var x);
Var log(Var x);
Var softmax(Var x);
Var log_softmax(Var x);
Var sigmoid(Var x);
Var min_reduce(Var x, MinAxis axis, std::size_t patch = 1);
Var clamp(Var x, double lo, double hi);
Var clamp_stopgrad(Var x, double lo = -std::numeric_limits<double>::infinity(),
                   double hi = std::numeric_limits<double>::infinity());
Var slice(Var x, std::size_t row0, std::size_t row1, std::size_t col0, std::size_t col1);
Var gather(Var x, std::vector<std::size_t> indices);
Var pairwise_distance(Var x);

/// Dark channel of an image batch as a graph: channel min, then window min.
Var dark_channel(Var images, std::size_t patch);

}  // namespace rvsl::ad
