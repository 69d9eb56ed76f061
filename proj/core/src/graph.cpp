#include "localsym/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "localsym/linalg.hpp"

namespace localsym {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Abs: return "abs";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::L2Norm: return "l2norm";
    case OpKind::Concat: return "concat";
    case OpKind::Reshape: return "reshape";
    case OpKind::MatExp: return "matexp";
    case OpKind::GridSample: return "grid_sample";
    case OpKind::MatInv: return "matinv";
    case OpKind::DetNormalize: return "det_normalize";
  }
  return "?";
}

void Graph::fail(NodeId id, const std::string& msg) const {
  throw std::invalid_argument("graph node #" + std::to_string(id) + " (" +
                              op_name(nodes_[id].op) + "): " + msg);
}

void Graph::check_finite_leaf(const Tensor& t, const char* what) const {
  if (!t.all_finite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
  }
}

NodeId Graph::push(Node n) {
  for (NodeId in : n.inputs) {
    if (in >= nodes_.size()) {
      throw std::invalid_argument("graph: input node id out of range");
    }
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  nodes_.push_back(std::move(n));
  const NodeId id = static_cast<NodeId>(nodes_.size() - 1);
  if (nodes_[id].op != OpKind::Input && nodes_[id].op != OpKind::Parameter &&
      nodes_[id].op != OpKind::Constant) {
    eval_node(id);  // define-by-run: shapes are checked as the graph is built
  } else {
    nodes_[id].evaluated = true;
  }
  return id;
}

NodeId Graph::input(const std::string& name, Tensor value) {
  check_finite_leaf(value, "input");
  if (named_.count(name)) throw std::invalid_argument("graph: duplicate leaf name " + name);
  Node n;
  n.op = OpKind::Input;
  n.name = name;
  n.value = std::move(value);
  const NodeId id = push(std::move(n));
  named_[name] = id;
  return id;
}

NodeId Graph::parameter(const std::string& name, Tensor value) {
  check_finite_leaf(value, "parameter");
  if (named_.count(name)) throw std::invalid_argument("graph: duplicate leaf name " + name);
  Node n;
  n.op = OpKind::Parameter;
  n.name = name;
  n.value = std::move(value);
  n.requires_grad = true;
  const NodeId id = push(std::move(n));
  named_[name] = id;
  return id;
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

namespace {
Node binary(OpKind op, NodeId a, NodeId b) {
  Node n;
  n.op = op;
  n.inputs = {a, b};
  return n;
}
Node unary(OpKind op, NodeId a) {
  Node n;
  n.op = op;
  n.inputs = {a};
  return n;
}
}  // namespace

NodeId Graph::add(NodeId a, NodeId b) { return push(binary(OpKind::Add, a, b)); }
NodeId Graph::sub(NodeId a, NodeId b) { return push(binary(OpKind::Sub, a, b)); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(binary(OpKind::Mul, a, b)); }
NodeId Graph::div(NodeId a, NodeId b) { return push(binary(OpKind::Div, a, b)); }
NodeId Graph::matmul(NodeId a, NodeId b) { return push(binary(OpKind::MatMul, a, b)); }
NodeId Graph::transpose(NodeId a) { return push(unary(OpKind::Transpose, a)); }

NodeId Graph::conv2d(NodeId x, NodeId kernel, NodeId bias, int pad) {
  Node n;
  n.op = OpKind::Conv2d;
  n.inputs = {x, kernel};
  if (bias != kNoNode) n.inputs.push_back(bias);
  n.pad = pad;
  return push(std::move(n));
}

NodeId Graph::relu(NodeId a) { return push(unary(OpKind::Relu, a)); }
NodeId Graph::tanh(NodeId a) { return push(unary(OpKind::Tanh, a)); }
NodeId Graph::abs(NodeId a) { return push(unary(OpKind::Abs, a)); }
NodeId Graph::sum(NodeId a) { return push(unary(OpKind::Sum, a)); }
NodeId Graph::mean(NodeId a) { return push(unary(OpKind::Mean, a)); }
NodeId Graph::l2norm(NodeId a) { return push(unary(OpKind::L2Norm, a)); }

NodeId Graph::concat(const std::vector<NodeId>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Node n;
  n.op = OpKind::Concat;
  n.inputs = parts;
  n.axis = axis;
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, std::vector<std::size_t> shape) {
  Node n;
  n.op = OpKind::Reshape;
  n.inputs = {a};
  n.value = Tensor(std::move(shape));  // target shape carrier until evaluated
  return push(std::move(n));
}

NodeId Graph::matexp(NodeId a) { return push(unary(OpKind::MatExp, a)); }

NodeId Graph::grid_sample(NodeId patch, NodeId minv, int out_radius, double fill) {
  Node n;
  n.op = OpKind::GridSample;
  n.inputs = {patch, minv};
  n.out_radius = out_radius;
  n.fill = fill;
  return push(std::move(n));
}

NodeId Graph::matinv(NodeId a) { return push(unary(OpKind::MatInv, a)); }
NodeId Graph::det_normalize(NodeId a) { return push(unary(OpKind::DetNormalize, a)); }

NodeId Graph::scale(NodeId a, double s) { return mul(a, constant(Tensor::scalar(s))); }

namespace {

// conv2d loops share the valid-range computation between forward and backward
struct ConvDims {
  std::size_t n, ci, h, w, co, kh, kw, ho, wo;
  bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, int pad) {
  ConvDims d{};
  d.batched = x.ndim() == 4;
  if (x.ndim() != 3 && x.ndim() != 4) {
    throw std::invalid_argument("conv2d: input must be (C,H,W) or (N,C,H,W), got " +
                                shape_to_string(x.shape()));
  }
  if (k.ndim() != 4) {
    throw std::invalid_argument("conv2d: kernel must be (Cout,Cin,kh,kw)");
  }
  d.n = d.batched ? x.shape()[0] : 1;
  d.ci = x.shape()[d.batched ? 1 : 0];
  d.h = x.shape()[d.batched ? 2 : 1];
  d.w = x.shape()[d.batched ? 3 : 2];
  d.co = k.shape()[0];
  d.kh = k.shape()[2];
  d.kw = k.shape()[3];
  if (k.shape()[1] != d.ci) {
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(k.shape()[1]) +
                                " input channels, input has " + std::to_string(d.ci));
  }
  const long ho = static_cast<long>(d.h) + 2 * pad - static_cast<long>(d.kh) + 1;
  const long wo = static_cast<long>(d.w) + 2 * pad - static_cast<long>(d.kw) + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  d.ho = static_cast<std::size_t>(ho);
  d.wo = static_cast<std::size_t>(wo);
  return d;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& k, const Tensor* bias, int pad) {
  const ConvDims d = conv_dims(x, k, pad);
  if (bias && (bias->ndim() != 1 || bias->shape()[0] != d.co)) {
    throw std::invalid_argument("conv2d: bias must have shape (Cout)");
  }
  Tensor out(d.batched ? std::vector<std::size_t>{d.n, d.co, d.ho, d.wo}
                       : std::vector<std::size_t>{d.co, d.ho, d.wo});
  const double* px = x.data();
  const double* pk = k.data();
  double* po = out.data();
  const std::size_t x_plane = d.h * d.w, o_plane = d.ho * d.wo;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.co; ++co) {
      double* out_ch = po + (n * d.co + co) * o_plane;
      if (bias) {
        const double b = (*bias)[co];
        for (std::size_t i = 0; i < o_plane; ++i) out_ch[i] = b;
      }
      for (std::size_t ci = 0; ci < d.ci; ++ci) {
        const double* in_ch = px + (n * d.ci + ci) * x_plane;
        const double* kc = pk + (co * d.ci + ci) * d.kh * d.kw;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          const long dy = static_cast<long>(ky) - pad;
          const std::size_t y0 = static_cast<std::size_t>(std::max(0L, -dy));
          const std::size_t y1 = static_cast<std::size_t>(
              std::min<long>(d.ho, static_cast<long>(d.h) - dy));
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            const double kv = kc[ky * d.kw + kx];
            if (kv == 0.0) continue;
            const long dx = static_cast<long>(kx) - pad;
            const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -dx));
            const std::size_t x1 = static_cast<std::size_t>(
                std::min<long>(d.wo, static_cast<long>(d.w) - dx));
            for (std::size_t y = y0; y < y1; ++y) {
              const double* in_row = in_ch + (y + dy) * d.w + dx;
              double* out_row = out_ch + y * d.wo;
              for (std::size_t xx = x0; xx < x1; ++xx) out_row[xx] += kv * in_row[xx];
            }
          }
        }
      }
    }
  }
  return out;
}

void conv2d_backward(const Tensor& gout, const Tensor& x, const Tensor& k, int pad,
                     Tensor* gx, Tensor* gk, Tensor* gbias) {
  const ConvDims d = conv_dims(x, k, pad);
  const double* pg = gout.data();
  const double* px = x.data();
  const double* pk = k.data();
  const std::size_t x_plane = d.h * d.w, o_plane = d.ho * d.wo;
  if (gbias) {
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t co = 0; co < d.co; ++co) {
        const double* g_ch = pg + (n * d.co + co) * o_plane;
        double s = 0.0;
        for (std::size_t i = 0; i < o_plane; ++i) s += g_ch[i];
        (*gbias)[co] += s;
      }
  }
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.co; ++co) {
      const double* g_ch = pg + (n * d.co + co) * o_plane;
      for (std::size_t ci = 0; ci < d.ci; ++ci) {
        const double* in_ch = px + (n * d.ci + ci) * x_plane;
        double* gx_ch = gx ? gx->data() + (n * d.ci + ci) * x_plane : nullptr;
        const double* kc = pk + (co * d.ci + ci) * d.kh * d.kw;
        double* gkc = gk ? gk->data() + (co * d.ci + ci) * d.kh * d.kw : nullptr;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          const long dy = static_cast<long>(ky) - pad;
          const std::size_t y0 = static_cast<std::size_t>(std::max(0L, -dy));
          const std::size_t y1 = static_cast<std::size_t>(
              std::min<long>(d.ho, static_cast<long>(d.h) - dy));
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            const long dx = static_cast<long>(kx) - pad;
            const std::size_t x0 = static_cast<std::size_t>(std::max(0L, -dx));
            const std::size_t x1 = static_cast<std::size_t>(
                std::min<long>(d.wo, static_cast<long>(d.w) - dx));
            const double kv = kc[ky * d.kw + kx];
            double ksum = 0.0;
            for (std::size_t y = y0; y < y1; ++y) {
              const double* g_row = g_ch + y * d.wo;
              const double* in_row = in_ch + (y + dy) * d.w + dx;
              double* gx_row = gx_ch ? gx_ch + (y + dy) * d.w + dx : nullptr;
              for (std::size_t xx = x0; xx < x1; ++xx) {
                ksum += g_row[xx] * in_row[xx];
                if (gx_row) gx_row[xx] += kv * g_row[xx];
              }
            }
            if (gkc) gkc[ky * d.kw + kx] += ksum;
          }
        }
      }
    }
  }
}

double op_add(double a, double b) { return a + b; }
double op_sub(double a, double b) { return a - b; }
double op_mul(double a, double b) { return a * b; }
double op_div(double a, double b) { return a / b; }

}  // namespace

void Graph::eval_node(NodeId id) {
  Node& n = nodes_[id];
  const auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
  try {
    switch (n.op) {
      case OpKind::Input:
      case OpKind::Parameter:
      case OpKind::Constant:
        break;
      case OpKind::Add: n.value = broadcast_binary(in(0), in(1), op_add); break;
      case OpKind::Sub: n.value = broadcast_binary(in(0), in(1), op_sub); break;
      case OpKind::Mul: n.value = broadcast_binary(in(0), in(1), op_mul); break;
      case OpKind::Div: n.value = broadcast_binary(in(0), in(1), op_div); break;
      case OpKind::MatMul: n.value = matmul(in(0), in(1)); break;
      case OpKind::Transpose: n.value = transpose(in(0)); break;
      case OpKind::Conv2d: {
        const Tensor* bias = n.inputs.size() > 2 ? &in(2) : nullptr;
        n.value = conv2d_forward(in(0), in(1), bias, n.pad);
        break;
      }
      case OpKind::Relu: {
        n.value = in(0);
        for (auto& v : n.value.storage()) v = v > 0.0 ? v : 0.0;
        break;
      }
      case OpKind::Tanh: {
        n.value = in(0);
        for (auto& v : n.value.storage()) v = std::tanh(v);
        break;
      }
      case OpKind::Abs: {
        n.value = in(0);
        for (auto& v : n.value.storage()) v = std::abs(v);
        break;
      }
      case OpKind::Sum: {
        double s = 0.0;
        for (double v : in(0).storage()) s += v;
        n.value = Tensor::scalar(s);
        break;
      }
      case OpKind::Mean: {
        double s = 0.0;
        for (double v : in(0).storage()) s += v;
        n.value = Tensor::scalar(s / static_cast<double>(in(0).size()));
        break;
      }
      case OpKind::L2Norm: n.value = Tensor::scalar(in(0).frobenius_norm()); break;
      case OpKind::Concat: {
        const Tensor& first = in(0);
        const std::size_t axis = n.axis;
        if (axis >= first.ndim()) fail(id, "concat axis out of range");
        std::vector<std::size_t> shape = first.shape();
        for (std::size_t i = 1; i < n.inputs.size(); ++i) {
          const Tensor& t = in(i);
          if (t.ndim() != first.ndim()) fail(id, "concat rank mismatch");
          for (std::size_t d = 0; d < shape.size(); ++d) {
            if (d == axis) continue;
            if (t.shape()[d] != shape[d]) {
              fail(id, "concat shape mismatch at axis " + std::to_string(d));
            }
          }
          shape[axis] += t.shape()[axis];
        }
        Tensor out(shape);
        std::size_t outer = 1, inner = 1;
        for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
        for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
        std::size_t offset = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor& t = in(i);
          const std::size_t len = t.shape()[axis] * inner;
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = t.data() + o * len;
            double* dst = out.data() + o * shape[axis] * inner + offset;
            for (std::size_t j = 0; j < len; ++j) dst[j] = src[j];
          }
          offset += len;
        }
        n.value = std::move(out);
        break;
      }
      case OpKind::Reshape: {
        const auto target = n.value.shape();  // carried from builder
        if (Tensor::shape_product(target) != in(0).size()) {
          fail(id, "reshape size mismatch: " + shape_to_string(in(0).shape()) + " -> " +
                       shape_to_string(target));
        }
        n.value = Tensor(target, in(0).storage());
        break;
      }
      case OpKind::MatExp: {
        n.saved.clear();
        n.value = detail::matexp_forward(in(0), &n.saved);
        break;
      }
      case OpKind::GridSample: {
        n.value = detail::grid_sample_forward(in(0), in(1), n.out_radius, n.fill);
        break;
      }
      case OpKind::MatInv: {
        const Tensor& a = in(0);
        if (a.ndim() != 2 || a.shape()[0] != a.shape()[1]) fail(id, "square matrix required");
        n.saved = {inverse(a)};
        n.value = n.saved[0];
        break;
      }
      case OpKind::DetNormalize: {
        const Tensor& c = in(0);
        if (c.ndim() != 2 || c.shape()[0] != c.shape()[1]) fail(id, "square matrix required");
        const double det = determinant(c);
        if (std::abs(det) <= 1e-8) {
          throw std::runtime_error("det_normalize: |det| = " + std::to_string(std::abs(det)) +
                                   " below singular guard 1e-8");
        }
        const double m = static_cast<double>(c.shape()[0]);
        const double s = std::pow(std::abs(det), -1.0 / m);
        Tensor out = c;
        for (auto& v : out.storage()) v *= s;
        n.saved = {inverse(c), Tensor::scalar(s)};
        n.value = std::move(out);
        break;
      }
    }
  } catch (const std::invalid_argument& e) {
    // re-tag with the node for diagnosis unless already tagged
    const std::string what = e.what();
    if (what.rfind("graph node", 0) == 0) throw;
    fail(id, what);
  }
  n.evaluated = true;
}

const Tensor& Graph::forward(NodeId target) {
  if (target >= nodes_.size()) throw std::invalid_argument("forward: node id out of range");
  for (NodeId id = 0; id <= target; ++id) {
    if (!nodes_[id].evaluated) eval_node(id);
  }
  return nodes_[target].value;
}

void Graph::bind(const std::string& name, Tensor value) {
  auto it = named_.find(name);
  if (it == named_.end()) throw std::invalid_argument("graph: unknown input name '" + name + "'");
  Node& leaf = nodes_[it->second];
  check_finite_leaf(value, "bind");
  if (!leaf.value.same_shape(value)) {
    throw std::invalid_argument("graph: bind shape mismatch for '" + name + "': expected " +
                                shape_to_string(leaf.value.shape()) + ", got " +
                                shape_to_string(value.shape()));
  }
  leaf.value = std::move(value);
  for (auto& n : nodes_) {
    if (n.op != OpKind::Input && n.op != OpKind::Parameter && n.op != OpKind::Constant) {
      n.evaluated = false;
    }
  }
}

std::map<std::string, Tensor> Graph::backward(NodeId scalar_output) {
  forward(scalar_output);
  Node& out = nodes_[scalar_output];
  if (out.value.size() != 1) {
    throw std::invalid_argument("backward: output must be scalar, got shape " +
                                shape_to_string(out.value.shape()));
  }
  std::vector<char> live(nodes_.size(), 0);
  out.grad = Tensor::full(out.value.shape(), 1.0);
  live[scalar_output] = 1;

  const auto accumulate = [&](NodeId id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    Tensor reduced = reduce_to_shape(g, n.value.shape());
    if (!live[id]) {
      n.grad = std::move(reduced);
      live[id] = 1;
      return;
    }
    for (std::size_t i = 0; i < n.grad.size(); ++i) n.grad[i] += reduced[i];
  };
  const auto needs = [&](NodeId id) { return nodes_[id].requires_grad; };

  for (NodeId id = scalar_output + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !live[id]) continue;
    const Tensor& g = n.grad;
    const auto inv = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
    switch (n.op) {
      case OpKind::Input:
      case OpKind::Parameter:
      case OpKind::Constant:
        break;
      case OpKind::Add:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        break;
      case OpKind::Sub: {
        accumulate(n.inputs[0], g);
        Tensor neg = g;
        for (auto& v : neg.storage()) v = -v;
        accumulate(n.inputs[1], neg);
        break;
      }
      case OpKind::Mul:
        if (needs(n.inputs[0])) accumulate(n.inputs[0], broadcast_binary(g, inv(1), op_mul));
        if (needs(n.inputs[1])) accumulate(n.inputs[1], broadcast_binary(g, inv(0), op_mul));
        break;
      case OpKind::Div: {
        if (needs(n.inputs[0])) accumulate(n.inputs[0], broadcast_binary(g, inv(1), op_div));
        if (needs(n.inputs[1])) {
          Tensor gb = broadcast_binary(broadcast_binary(g, n.value, op_mul), inv(1), op_div);
          for (auto& v : gb.storage()) v = -v;
          accumulate(n.inputs[1], gb);
        }
        break;
      }
      case OpKind::MatMul:
        if (needs(n.inputs[0])) accumulate(n.inputs[0], matmul(g, transpose(inv(1))));
        if (needs(n.inputs[1])) accumulate(n.inputs[1], matmul(transpose(inv(0)), g));
        break;
      case OpKind::Transpose:
        accumulate(n.inputs[0], transpose(g));
        break;
      case OpKind::Conv2d: {
        const bool has_bias = n.inputs.size() > 2;
        const bool need_x = nodes_[n.inputs[0]].requires_grad;
        const bool need_k = nodes_[n.inputs[1]].requires_grad;
        const bool need_b = has_bias && nodes_[n.inputs[2]].requires_grad;
        Tensor gx = need_x ? Tensor::zeros(inv(0).shape()) : Tensor();
        Tensor gk = need_k ? Tensor::zeros(inv(1).shape()) : Tensor();
        Tensor gb = need_b ? Tensor::zeros(inv(2).shape()) : Tensor();
        conv2d_backward(g, inv(0), inv(1), n.pad, need_x ? &gx : nullptr,
                        need_k ? &gk : nullptr, need_b ? &gb : nullptr);
        if (need_x) accumulate(n.inputs[0], gx);
        if (need_k) accumulate(n.inputs[1], gk);
        if (need_b) accumulate(n.inputs[2], gb);
        break;
      }
      case OpKind::Relu: {
        Tensor gx = g;
        const Tensor& x = inv(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > 0.0 ? gx[i] : 0.0;
        accumulate(n.inputs[0], gx);
        break;
      }
      case OpKind::Tanh: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0 - n.value[i] * n.value[i];
        accumulate(n.inputs[0], gx);
        break;
      }
      case OpKind::Abs: {
        Tensor gx = g;
        const Tensor& x = inv(0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
          gx[i] = x[i] > 0.0 ? gx[i] : (x[i] < 0.0 ? -gx[i] : 0.0);
        }
        accumulate(n.inputs[0], gx);
        break;
      }
      case OpKind::Sum:
        accumulate(n.inputs[0], Tensor::full(inv(0).shape(), g[0]));
        break;
      case OpKind::Mean:
        accumulate(n.inputs[0],
                   Tensor::full(inv(0).shape(), g[0] / static_cast<double>(inv(0).size())));
        break;
      case OpKind::L2Norm: {
        const double norm = n.value[0];
        Tensor gx = inv(0);
        if (norm > 0.0) {
          for (auto& v : gx.storage()) v *= g[0] / norm;
        } else {
          for (auto& v : gx.storage()) v = 0.0;
        }
        accumulate(n.inputs[0], gx);
        break;
      }
      case OpKind::Concat: {
        const std::size_t axis = n.axis;
        const auto& shape = n.value.shape();
        std::size_t outer = 1, inner = 1;
        for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
        for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
        std::size_t offset = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const Tensor& t = inv(i);
          const std::size_t len = t.shape()[axis] * inner;
          if (nodes_[n.inputs[i]].requires_grad) {
            Tensor gi(t.shape());
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = g.data() + o * shape[axis] * inner + offset;
              double* dst = gi.data() + o * len;
              for (std::size_t j = 0; j < len; ++j) dst[j] = src[j];
            }
            accumulate(n.inputs[i], gi);
          }
          offset += len;
        }
        break;
      }
      case OpKind::Reshape:
        accumulate(n.inputs[0], Tensor(inv(0).shape(), g.storage()));
        break;
      case OpKind::MatExp:
        accumulate(n.inputs[0], detail::matexp_backward(g, n.saved));
        break;
      case OpKind::GridSample: {
        const bool need_p = nodes_[n.inputs[0]].requires_grad;
        const bool need_m = nodes_[n.inputs[1]].requires_grad;
        Tensor gp = need_p ? Tensor::zeros(inv(0).shape()) : Tensor();
        Tensor gm = need_m ? Tensor::zeros(inv(1).shape()) : Tensor();
        detail::grid_sample_backward(g, inv(0), inv(1), n.out_radius, n.fill,
                                     need_p ? &gp : nullptr, need_m ? &gm : nullptr);
        if (need_p) accumulate(n.inputs[0], gp);
        if (need_m) accumulate(n.inputs[1], gm);
        break;
      }
      case OpKind::MatInv: {
        const Tensor& y = n.saved[0];
        Tensor gin = matmul(matmul(transpose(y), g), transpose(y));
        for (auto& v : gin.storage()) v = -v;
        accumulate(n.inputs[0], gin);
        break;
      }
      case OpKind::DetNormalize: {
        const Tensor& cinv = n.saved[0];
        const double s = n.saved[1][0];
        const double m = static_cast<double>(inv(0).shape()[0]);
        const double gc = frobenius_dot(g, inv(0));
        Tensor gin = g;
        const Tensor cit = transpose(cinv);
        for (std::size_t i = 0; i < gin.size(); ++i) {
          gin[i] = s * g[i] - (s / m) * gc * cit[i];
        }
        accumulate(n.inputs[0], gin);
        break;
      }
    }
  }

  std::map<std::string, Tensor> grads;
  for (const auto& [name, id] : named_) {
    const Node& n = nodes_[id];
    if (n.op == OpKind::Parameter) {
      grads[name] = live[id] ? n.grad : Tensor::zeros(n.value.shape());
    }
  }
  return grads;
}

Tensor evaluate_graph(Graph& g, NodeId output, const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, value] : inputs) g.bind(name, value);
  return g.forward(output);
}

std::map<std::string, Tensor> backward(Graph& g, NodeId scalar_output) {
  return g.backward(scalar_output);
}

}  // namespace localsym
