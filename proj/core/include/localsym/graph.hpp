#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "localsym/tensor.hpp"

namespace localsym {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

enum class OpKind {
  Input,      // named non-trainable leaf
  Parameter,  // named trainable leaf
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Transpose,
  Conv2d,
  Relu,
  Tanh,
  Abs,
  Sum,
  Mean,
  L2Norm,
  Concat,
  Reshape,
  MatExp,
  GridSample,
  MatInv,
  DetNormalize,
};

const char* op_name(OpKind op);

struct Node {
  OpKind op;
  std::vector<NodeId> inputs;
  Tensor value;
  Tensor grad;
  std::string name;          // Input / Parameter leaves
  bool requires_grad = false;
  bool evaluated = false;

  // op attributes
  int pad = 0;               // Conv2d zero padding
  int out_radius = -1;       // GridSample output radius (pixels)
  double fill = 0.0;         // GridSample out-of-domain fill (Eq.-style zero extension)
  std::size_t axis = 0;      // Concat
  std::vector<Tensor> saved; // MatExp squaring stages, MatInv/DetNormalize inverses
};

/// Reverse-mode differentiable computation record.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a single forward sweep in id order is a valid schedule. Leaves are
/// named inputs (non-trainable), named parameters (trainable), or anonymous
/// constants. Graphs are single-owner; build one per optimization step.
class Graph {
 public:
  NodeId input(const std::string& name, Tensor value);
  NodeId parameter(const std::string& name, Tensor value);
  NodeId constant(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);

  /// 2-D convolution, stride 1, zero padding `pad`.
  /// x: (N,Cin,H,W) or (Cin,H,W); kernel: (Cout,Cin,kh,kw); bias: (Cout) or kNoNode.
  NodeId conv2d(NodeId x, NodeId kernel, NodeId bias, int pad);

  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId abs(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId l2norm(NodeId a);
  NodeId concat(const std::vector<NodeId>& parts, std::size_t axis);
  NodeId reshape(NodeId a, std::vector<std::size_t> shape);

  /// Matrix exponential by scaling-and-squaring over a truncated Taylor
  /// series; backward differentiates the same computation.
  NodeId matexp(NodeId a);

  /// Warp a patch by the linear map with matrix `minv` expressed in local
  /// pixel-offset coordinates: out(p) = bilinear(in, minv @ p + center).
  /// Output is square with the given radius (same radius as input when
  /// out_radius < 0). Points sourced outside the input read `fill`.
  /// patch: (C,H,W) or (N,C,H,W); minv: (2,2) or (N,2,2).
  NodeId grid_sample(NodeId patch, NodeId minv, int out_radius = -1, double fill = 0.0);

  NodeId matinv(NodeId a);

  /// C / |det C|^(1/m): rescales a square matrix so |det| = 1.
  NodeId det_normalize(NodeId a);

  // convenience
  NodeId scale(NodeId a, double s);
  NodeId neg(NodeId a) { return scale(a, -1.0); }

  /// Evaluate all unevaluated nodes with id <= target; returns target value.
  const Tensor& forward(NodeId target);

  /// Accumulate d(output)/d(leaf) for every trainable parameter.
  /// Output must be scalar and already evaluated (forward() is called if not).
  std::map<std::string, Tensor> backward(NodeId scalar_output);

  /// Rebind a named input's value and invalidate downstream caches.
  void bind(const std::string& name, Tensor value);

  const Node& node(NodeId id) const { return nodes_[id]; }
  Node& node(NodeId id) { return nodes_[id]; }
  std::size_t node_count() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return nodes_[id].value; }

 private:
  NodeId push(Node n);
  void eval_node(NodeId id);
  void check_finite_leaf(const Tensor& t, const char* what) const;
  [[noreturn]] void fail(NodeId id, const std::string& msg) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> named_;
};

/// Run the forward pass with the given named-input bindings.
Tensor evaluate_graph(Graph& g, NodeId output, const std::map<std::string, Tensor>& inputs);

/// Gradients of a scalar output w.r.t. all trainable parameters.
std::map<std::string, Tensor> backward(Graph& g, NodeId scalar_output);

namespace detail {
// shared kernels, also used by eager geometry wrappers
Tensor matexp_forward(const Tensor& a, std::vector<Tensor>* stages);
Tensor matexp_backward(const Tensor& grad_out, const std::vector<Tensor>& stages);
Tensor grid_sample_forward(const Tensor& patch, const Tensor& minv, int out_radius, double fill);
void grid_sample_backward(const Tensor& grad_out, const Tensor& patch, const Tensor& minv,
                          int out_radius, double fill, Tensor* grad_patch, Tensor* grad_minv);
}  // namespace detail

}  // namespace localsym
