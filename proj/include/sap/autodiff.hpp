#pragma once

// Minimal reverse-mode differentiation engine. The primitive set is closed:
// it covers exactly what the anchor-proposal pipeline and the classifier
// compose, each primitive with hand-audited forward/backward rules. Shapes
// are fixed at construction time, so a graph can be rebuilt once per
// configuration and rebound per sample.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sap/tensor.hpp"

namespace sap::ad {

using sap::ShapeMismatch;

struct UnboundInput : std::runtime_error {
  explicit UnboundInput(const std::string& m) : std::runtime_error("UnboundInput: " + m) {}
};
struct NonFiniteIntermediate : std::runtime_error {
  int node_id;
  explicit NonFiniteIntermediate(int id, const std::string& op)
      : std::runtime_error("NonFiniteIntermediate: node " + std::to_string(id) + " (" + op + ")"),
        node_id(id) {}
};
struct NonScalarOutput : std::runtime_error {
  NonScalarOutput() : std::runtime_error("NonScalarOutput: backward requires a scalar output") {}
};

enum class Op {
  Constant,
  Parameter,
  Add,
  Sub,
  Mul,
  MatMul,
  Exp,
  Log,
  SumAxis,
  MeanAxis,
  Div,
  Dot,
  Norm,
  Concat,
  Relu,
  SoftmaxCrossEntropy,
  Scale,
  Select,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::SumAxis: return "sum-over-axis";
    case Op::MeanAxis: return "mean-over-axis";
    case Op::Div: return "division";
    case Op::Dot: return "dot";
    case Op::Norm: return "euclidean-norm";
    case Op::Concat: return "concat";
    case Op::Relu: return "relu";
    case Op::SoftmaxCrossEntropy: return "softmax-cross-entropy";
    case Op::Scale: return "scalar-scale";
    case Op::Select: return "gather/select";
  }
  return "?";
}

using NodeId = int;

// Gradients keyed by parameter node id.
using Gradients = std::map<NodeId, Tensor>;

struct Node {
  Op op = Op::Constant;
  std::vector<int> shape;
  std::vector<NodeId> parents;
  Tensor value;
  Tensor grad;
  bool bound = false;  // leaves only: has a value been supplied

  // Per-op attributes.
  int axis = -1;                  // SumAxis / MeanAxis
  bool trans_a = false;           // MatMul
  bool trans_b = false;           // MatMul
  double factor = 1.0;            // Scale
  std::vector<NodeId> guards;     // Div: zero branch when any guard < eps
  bool clamp_unit = false;        // Div: clamp output into [-1, 1]
  std::vector<int> select_index;  // Select: leading index prefix
  int label = -1;                 // SoftmaxCrossEntropy
};

class Graph {
 public:
  // ---- leaves -------------------------------------------------------------

  NodeId constant(const Tensor& v) {
    NodeId id = push(Op::Constant, v.shape(), {});
    nodes_[id].value = v;
    nodes_[id].bound = true;
    return id;
  }

  // Unbound constant: shape known now, value supplied via set_value before
  // the first forward pass.
  NodeId constant(std::vector<int> shape) { return push(Op::Constant, std::move(shape), {}); }

  NodeId parameter(const Tensor& v) {
    NodeId id = push(Op::Parameter, v.shape(), {});
    nodes_[id].value = v;
    nodes_[id].bound = true;
    return id;
  }

  // ---- elementwise binary -------------------------------------------------
  // Shapes: equal; or rhs scalar; or lhs (m,n) with rhs (n) broadcast per row.

  NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }

  // Division with the angle-branch extensions: if any guard node's (scalar)
  // value falls below kDegenerateEps the output is exactly 0 and no gradient
  // flows through num, den, or the guards; clamp_unit pins the quotient into
  // [-1, 1] (derivative 0 where the clamp binds).
  NodeId div(NodeId num, NodeId den, std::vector<NodeId> guards = {}, bool clamp_unit = false) {
    for (NodeId g : guards) {
      if (g < 0 || g >= node_count()) throw std::invalid_argument("division guard id out of range");
      if (node(g).shape.size() != 0) throw ShapeMismatch("division guard must be scalar");
    }
    NodeId id = binary(Op::Div, num, den);
    nodes_[id].guards = std::move(guards);
    nodes_[id].clamp_unit = clamp_unit;
    return id;
  }

  // ---- matmul -------------------------------------------------------------
  // 2-D x 2-D, or 1-D vector on either side (treated as a row/column and
  // squeezed back out). trans_a / trans_b transpose the 2-D operand first.

  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false) {
    const auto& sa = node(a).shape;
    const auto& sb = node(b).shape;
    if (sa.size() > 2 || sb.size() > 2 || sa.empty() || sb.empty()) {
      throw ShapeMismatch("matmul expects rank-1 or rank-2 operands");
    }
    if (sa.size() == 1 && sb.size() == 1) throw ShapeMismatch("use dot for vector-vector products");
    if (sa.size() == 1 && trans_a) throw ShapeMismatch("cannot transpose a vector operand");
    if (sb.size() == 1 && trans_b) throw ShapeMismatch("cannot transpose a vector operand");
    // A vector left operand acts as a row, a vector right operand as a column.
    const int am = sa.size() == 1 ? 1 : (trans_a ? sa[1] : sa[0]);
    const int ak = sa.size() == 1 ? sa[0] : (trans_a ? sa[0] : sa[1]);
    const int bk = sb.size() == 1 ? sb[0] : (trans_b ? sb[1] : sb[0]);
    const int bn = sb.size() == 1 ? 1 : (trans_b ? sb[0] : sb[1]);
    if (ak != bk) throw ShapeMismatch("matmul inner dims " + std::to_string(ak) + " vs " + std::to_string(bk));
    std::vector<int> out;
    if (sa.size() == 2) out.push_back(am);
    if (sb.size() == 2) out.push_back(bn);
    NodeId id = push(Op::MatMul, out, {a, b});
    nodes_[id].trans_a = trans_a;
    nodes_[id].trans_b = trans_b;
    return id;
  }

  // ---- elementwise unary --------------------------------------------------

  NodeId exp(NodeId a) { return push(Op::Exp, node(a).shape, {a}); }
  NodeId log(NodeId a) { return push(Op::Log, node(a).shape, {a}); }
  NodeId relu(NodeId a) { return push(Op::Relu, node(a).shape, {a}); }

  NodeId scale(NodeId a, double factor) {
    NodeId id = push(Op::Scale, node(a).shape, {a});
    nodes_[id].factor = factor;
    return id;
  }

  // ---- reductions ---------------------------------------------------------

  NodeId sum_axis(NodeId a, int axis) { return reduce(Op::SumAxis, a, axis); }
  NodeId mean_axis(NodeId a, int axis) { return reduce(Op::MeanAxis, a, axis); }

  NodeId dot(NodeId a, NodeId b) {
    const auto& sa = node(a).shape;
    const auto& sb = node(b).shape;
    if (sa.size() != 1 || sa != sb) throw ShapeMismatch("dot expects equal-length vectors");
    return push(Op::Dot, {}, {a, b});
  }

  // Euclidean norm of a vector. Backward is zero when the norm is below
  // kDegenerateEps (the coincidence branch), so no gradient singularity.
  NodeId norm(NodeId a) {
    if (node(a).shape.size() != 1) throw ShapeMismatch("norm expects a vector");
    return push(Op::Norm, {}, {a});
  }

  // ---- structure ----------------------------------------------------------

  // Row-major fill of out_shape from the parents' values in order.
  NodeId concat(std::vector<NodeId> parts, std::vector<int> out_shape) {
    long long total = 0;
    for (NodeId p : parts) total += Tensor::count(node(p).shape);
    if (total != Tensor::count(out_shape)) throw ShapeMismatch("concat size mismatch");
    return push(Op::Concat, std::move(out_shape), std::move(parts));
  }

  // Select the sub-tensor at a leading index prefix, e.g. (t,v) of a (T,V,3)
  // tensor yields a (3,) view copy.
  NodeId select(NodeId src, std::vector<int> index) {
    const auto& s = node(src).shape;
    if (index.size() > s.size()) throw ShapeMismatch("select index rank too large");
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] < 0 || index[i] >= s[i]) throw ShapeMismatch("select index out of range");
    }
    std::vector<int> out(s.begin() + static_cast<long>(index.size()), s.end());
    NodeId id = push(Op::Select, std::move(out), {src});
    nodes_[id].select_index = std::move(index);
    return id;
  }

  NodeId softmax_cross_entropy(NodeId logits, int label) {
    if (node(logits).shape.size() != 1) throw ShapeMismatch("softmax-cross-entropy expects a logit vector");
    NodeId id = push(Op::SoftmaxCrossEntropy, {}, {logits});
    nodes_[id].label = label;
    return id;
  }

  // ---- bindings -----------------------------------------------------------

  void set_value(NodeId id, std::span<const double> v) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.op != Op::Constant && n.op != Op::Parameter) {
      throw std::invalid_argument("set_value: node is not a leaf");
    }
    if (static_cast<long long>(v.size()) != Tensor::count(n.shape)) {
      throw ShapeMismatch("set_value: size mismatch on node " + std::to_string(id));
    }
    std::copy(v.begin(), v.end(), n.value.data());
    n.bound = true;
  }

  void set_value(NodeId id, const Tensor& t) { set_value(id, t.values()); }

  void set_label(NodeId id, int label) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.op != Op::SoftmaxCrossEntropy) throw std::invalid_argument("set_label: wrong node kind");
    n.label = label;
  }

  const Tensor& value(NodeId id) const { return node(id).value; }
  const Tensor& grad(NodeId id) const { return node(id).grad; }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  Node& node_mut(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  // ---- execution ----------------------------------------------------------

  // Evaluates every node in construction (= topological) order.
  void forward() {
    for (NodeId id = 0; id < node_count(); ++id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      eval_node(id, n);
      for (double v : n.value.values()) {
        if (!std::isfinite(v)) throw NonFiniteIntermediate(id, op_name(n.op));
      }
    }
  }

  // Reverse accumulation from a scalar output. Parameters not reachable from
  // the output keep zero gradients.
  Gradients backward(NodeId output, const std::vector<NodeId>& params) {
    if (!node(output).shape.empty()) throw NonScalarOutput();
    for (Node& n : nodes_) {
      if (n.grad.size() == 0) n.grad = Tensor(n.shape);
      else n.grad.fill(0.0);
    }
    nodes_[static_cast<std::size_t>(output)].grad = Tensor::scalar(1.0);
    for (NodeId id = output; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      bool any = false;
      for (double g : n.grad.values()) {
        if (g != 0.0) { any = true; break; }
      }
      if (any) backprop_node(n);
    }
    Gradients out;
    for (NodeId p : params) {
      if (node(p).op != Op::Parameter) throw std::invalid_argument("backward: non-parameter node requested");
      Tensor g = node(p).grad;
      if (g.size() == 0) g = Tensor(node(p).shape);
      out.emplace(p, std::move(g));
    }
    return out;
  }

 private:
  std::vector<Node> nodes_;

  NodeId push(Op op, std::vector<int> shape, std::vector<NodeId> parents) {
    for (NodeId p : parents) {
      if (p < 0 || p >= node_count()) throw std::invalid_argument("parent id out of range");
    }
    Node n;
    n.op = op;
    n.shape = std::move(shape);
    n.parents = std::move(parents);
    n.value = Tensor(n.shape);
    nodes_.push_back(std::move(n));
    return node_count() - 1;
  }

  enum class Bcast { Same, ScalarRhs, RowVecRhs };

  static Bcast bcast_kind(const std::vector<int>& a, const std::vector<int>& b) {
    if (a == b) return Bcast::Same;
    if (b.empty()) return Bcast::ScalarRhs;
    if (a.size() == 2 && b.size() == 1 && a[1] == b[0]) return Bcast::RowVecRhs;
    throw ShapeMismatch("elementwise op on incompatible shapes");
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    bcast_kind(node(a).shape, node(b).shape);  // validates
    return push(op, node(a).shape, {a, b});
  }

  NodeId reduce(Op op, NodeId a, int axis) {
    const auto& s = node(a).shape;
    if (s.empty()) throw ShapeMismatch("reduce over a scalar");
    if (axis < 0 || axis >= static_cast<int>(s.size())) throw ShapeMismatch("reduce axis out of range");
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(s.size()); ++i) {
      if (i != axis) out.push_back(s[i]);
    }
    NodeId id = push(op, std::move(out), {a});
    nodes_[id].axis = axis;
    return id;
  }

  // Iteration helpers for reductions: axis splits the index space into
  // outer * len * inner.
  static void axis_extents(const std::vector<int>& s, int axis, long long& outer, long long& len,
                           long long& inner) {
    outer = 1;
    inner = 1;
    len = s[static_cast<std::size_t>(axis)];
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[static_cast<std::size_t>(i)];
  }

  bool div_branch_zero(const Node& n) const {
    for (NodeId g : n.guards) {
      if (node(g).value[0] < kDegenerateEps) return true;
    }
    return false;
  }

  void eval_node(NodeId id, Node& n) {
    switch (n.op) {
      case Op::Constant:
      case Op::Parameter:
        if (!n.bound) throw UnboundInput("node " + std::to_string(id));
        return;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div: {
        const Tensor& a = node(n.parents[0]).value;
        const Tensor& b = node(n.parents[1]).value;
        Bcast k = bcast_kind(node(n.parents[0]).shape, node(n.parents[1]).shape);
        const long long sz = a.size();
        const int cols = k == Bcast::RowVecRhs ? a.dim(1) : 0;
        if (n.op == Op::Div && div_branch_zero(n)) {
          n.value.fill(0.0);
          return;
        }
        for (long long i = 0; i < sz; ++i) {
          const double bv = k == Bcast::Same ? b[static_cast<std::size_t>(i)]
                           : k == Bcast::ScalarRhs ? b[0]
                                                   : b[static_cast<std::size_t>(i % cols)];
          double r = 0.0;
          switch (n.op) {
            case Op::Add: r = a[static_cast<std::size_t>(i)] + bv; break;
            case Op::Sub: r = a[static_cast<std::size_t>(i)] - bv; break;
            case Op::Mul: r = a[static_cast<std::size_t>(i)] * bv; break;
            default: r = a[static_cast<std::size_t>(i)] / bv; break;
          }
          if (n.op == Op::Div && n.clamp_unit) r = std::clamp(r, -1.0, 1.0);
          n.value[static_cast<std::size_t>(i)] = r;
        }
        return;
      }
      case Op::MatMul: {
        const Node& pa = node(n.parents[0]);
        const Node& pb = node(n.parents[1]);
        gemm(pa.value, n.trans_a, pb.value, n.trans_b, n.value);
        return;
      }
      case Op::Exp: {
        const Tensor& a = node(n.parents[0]).value;
        for (long long i = 0; i < a.size(); ++i) n.value[static_cast<std::size_t>(i)] = std::exp(a[static_cast<std::size_t>(i)]);
        return;
      }
      case Op::Log: {
        const Tensor& a = node(n.parents[0]).value;
        for (long long i = 0; i < a.size(); ++i) n.value[static_cast<std::size_t>(i)] = std::log(a[static_cast<std::size_t>(i)]);
        return;
      }
      case Op::Relu: {
        const Tensor& a = node(n.parents[0]).value;
        for (long long i = 0; i < a.size(); ++i) {
          const double v = a[static_cast<std::size_t>(i)];
          n.value[static_cast<std::size_t>(i)] = v > 0.0 ? v : 0.0;
        }
        return;
      }
      case Op::Scale: {
        const Tensor& a = node(n.parents[0]).value;
        for (long long i = 0; i < a.size(); ++i) n.value[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)] * n.factor;
        return;
      }
      case Op::SumAxis:
      case Op::MeanAxis: {
        const Node& p = node(n.parents[0]);
        long long outer, len, inner;
        axis_extents(p.shape, n.axis, outer, len, inner);
        const double* src = p.value.data();
        double* dst = n.value.data();
        for (long long o = 0; o < outer; ++o) {
          for (long long in = 0; in < inner; ++in) {
            double acc = 0.0;
            for (long long l = 0; l < len; ++l) acc += src[(o * len + l) * inner + in];
            dst[o * inner + in] = n.op == Op::MeanAxis ? acc / static_cast<double>(len) : acc;
          }
        }
        return;
      }
      case Op::Dot: {
        const Tensor& a = node(n.parents[0]).value;
        const Tensor& b = node(n.parents[1]).value;
        double acc = 0.0;
        for (long long i = 0; i < a.size(); ++i) acc += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
        n.value[0] = acc;
        return;
      }
      case Op::Norm: {
        const Tensor& a = node(n.parents[0]).value;
        double acc = 0.0;
        for (long long i = 0; i < a.size(); ++i) acc += a[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)];
        n.value[0] = std::sqrt(acc);
        return;
      }
      case Op::Concat: {
        double* dst = n.value.data();
        for (NodeId p : n.parents) {
          const Tensor& v = node(p).value;
          std::copy(v.data(), v.data() + v.size(), dst);
          dst += v.size();
        }
        return;
      }
      case Op::Select: {
        const Node& p = node(n.parents[0]);
        const long long off = select_offset(p.shape, n.select_index) ;
        const double* src = p.value.data() + off;
        std::copy(src, src + n.value.size(), n.value.data());
        return;
      }
      case Op::SoftmaxCrossEntropy: {
        const Tensor& z = node(n.parents[0]).value;
        if (n.label < 0 || n.label >= static_cast<int>(z.size())) {
          throw std::invalid_argument("softmax-cross-entropy: label out of range");
        }
        double m = z[0];
        for (long long i = 1; i < z.size(); ++i) m = std::max(m, z[static_cast<std::size_t>(i)]);
        double acc = 0.0;
        for (long long i = 0; i < z.size(); ++i) acc += std::exp(z[static_cast<std::size_t>(i)] - m);
        n.value[0] = m + std::log(acc) - z[static_cast<std::size_t>(n.label)];
        return;
      }
    }
  }

  void backprop_node(Node& n) {
    switch (n.op) {
      case Op::Constant:
      case Op::Parameter:
        return;
      case Op::Add:
      case Op::Sub: {
        Node& a = node_mut(n.parents[0]);
        Node& b = node_mut(n.parents[1]);
        Bcast k = bcast_kind(a.shape, b.shape);
        const double sign = n.op == Op::Sub ? -1.0 : 1.0;
        const long long sz = n.grad.size();
        const int cols = k == Bcast::RowVecRhs ? a.value.dim(1) : 0;
        for (long long i = 0; i < sz; ++i) {
          const double g = n.grad[static_cast<std::size_t>(i)];
          a.grad[static_cast<std::size_t>(i)] += g;
          if (k == Bcast::Same) b.grad[static_cast<std::size_t>(i)] += sign * g;
          else if (k == Bcast::ScalarRhs) b.grad[0] += sign * g;
          else b.grad[static_cast<std::size_t>(i % cols)] += sign * g;
        }
        return;
      }
      case Op::Mul: {
        Node& a = node_mut(n.parents[0]);
        Node& b = node_mut(n.parents[1]);
        Bcast k = bcast_kind(a.shape, b.shape);
        const long long sz = n.grad.size();
        const int cols = k == Bcast::RowVecRhs ? a.value.dim(1) : 0;
        for (long long i = 0; i < sz; ++i) {
          const double g = n.grad[static_cast<std::size_t>(i)];
          const std::size_t bi = k == Bcast::Same ? static_cast<std::size_t>(i)
                                : k == Bcast::ScalarRhs ? 0
                                                        : static_cast<std::size_t>(i % cols);
          a.grad[static_cast<std::size_t>(i)] += g * b.value[bi];
          b.grad[bi] += g * a.value[static_cast<std::size_t>(i)];
        }
        return;
      }
      case Op::Div: {
        if (div_branch_zero(n)) return;  // zero branch: no gradient anywhere
        Node& a = node_mut(n.parents[0]);
        Node& b = node_mut(n.parents[1]);
        Bcast k = bcast_kind(a.shape, b.shape);
        const long long sz = n.grad.size();
        const int cols = k == Bcast::RowVecRhs ? a.value.dim(1) : 0;
        for (long long i = 0; i < sz; ++i) {
          const double g = n.grad[static_cast<std::size_t>(i)];
          const std::size_t bi = k == Bcast::Same ? static_cast<std::size_t>(i)
                                : k == Bcast::ScalarRhs ? 0
                                                        : static_cast<std::size_t>(i % cols);
          const double av = a.value[static_cast<std::size_t>(i)];
          const double bv = b.value[bi];
          if (n.clamp_unit && std::abs(av / bv) > 1.0) continue;  // clamp binds
          a.grad[static_cast<std::size_t>(i)] += g / bv;
          b.grad[bi] -= g * av / (bv * bv);
        }
        return;
      }
      case Op::MatMul: {
        Node& a = node_mut(n.parents[0]);
        Node& b = node_mut(n.parents[1]);
        // dL/dA = G B^T, dL/dB = A^T G in the plain case; transposes move the
        // flags around. Vectors are handled by their effective orientation.
        matmul_backward(a, n.trans_a, b, n.trans_b, n.grad);
        return;
      }
      case Op::Exp: {
        Node& a = node_mut(n.parents[0]);
        for (long long i = 0; i < n.grad.size(); ++i) {
          a.grad[static_cast<std::size_t>(i)] += n.grad[static_cast<std::size_t>(i)] * n.value[static_cast<std::size_t>(i)];
        }
        return;
      }
      case Op::Log: {
        Node& a = node_mut(n.parents[0]);
        for (long long i = 0; i < n.grad.size(); ++i) {
          a.grad[static_cast<std::size_t>(i)] += n.grad[static_cast<std::size_t>(i)] / a.value[static_cast<std::size_t>(i)];
        }
        return;
      }
      case Op::Relu: {
        Node& a = node_mut(n.parents[0]);
        for (long long i = 0; i < n.grad.size(); ++i) {
          if (a.value[static_cast<std::size_t>(i)] > 0.0) a.grad[static_cast<std::size_t>(i)] += n.grad[static_cast<std::size_t>(i)];
        }
        return;
      }
      case Op::Scale: {
        Node& a = node_mut(n.parents[0]);
        for (long long i = 0; i < n.grad.size(); ++i) a.grad[static_cast<std::size_t>(i)] += n.grad[static_cast<std::size_t>(i)] * n.factor;
        return;
      }
      case Op::SumAxis:
      case Op::MeanAxis: {
        Node& a = node_mut(n.parents[0]);
        long long outer, len, inner;
        axis_extents(a.shape, n.axis, outer, len, inner);
        const double scale = n.op == Op::MeanAxis ? 1.0 / static_cast<double>(len) : 1.0;
        for (long long o = 0; o < outer; ++o) {
          for (long long in = 0; in < inner; ++in) {
            const double g = n.grad[static_cast<std::size_t>(o * inner + in)] * scale;
            for (long long l = 0; l < len; ++l) a.grad[static_cast<std::size_t>((o * len + l) * inner + in)] += g;
          }
        }
        return;
      }
      case Op::Dot: {
        Node& a = node_mut(n.parents[0]);
        Node& b = node_mut(n.parents[1]);
        const double g = n.grad[0];
        for (long long i = 0; i < a.value.size(); ++i) {
          a.grad[static_cast<std::size_t>(i)] += g * b.value[static_cast<std::size_t>(i)];
          b.grad[static_cast<std::size_t>(i)] += g * a.value[static_cast<std::size_t>(i)];
        }
        return;
      }
      case Op::Norm: {
        Node& a = node_mut(n.parents[0]);
        const double nv = n.value[0];
        if (nv < kDegenerateEps) return;  // coincidence branch: zero gradient
        const double g = n.grad[0] / nv;
        for (long long i = 0; i < a.value.size(); ++i) a.grad[static_cast<std::size_t>(i)] += g * a.value[static_cast<std::size_t>(i)];
        return;
      }
      case Op::Concat: {
        long long off = 0;
        for (NodeId p : n.parents) {
          Node& pn = node_mut(p);
          for (long long i = 0; i < pn.value.size(); ++i) pn.grad[static_cast<std::size_t>(i)] += n.grad[static_cast<std::size_t>(off + i)];
          off += pn.value.size();
        }
        return;
      }
      case Op::Select: {
        Node& p = node_mut(n.parents[0]);
        const long long off = select_offset(p.shape, n.select_index);
        for (long long i = 0; i < n.grad.size(); ++i) p.grad[static_cast<std::size_t>(off + i)] += n.grad[static_cast<std::size_t>(i)];
        return;
      }
      case Op::SoftmaxCrossEntropy: {
        Node& a = node_mut(n.parents[0]);
        const Tensor& z = a.value;
        const double g = n.grad[0];
        double m = z[0];
        for (long long i = 1; i < z.size(); ++i) m = std::max(m, z[static_cast<std::size_t>(i)]);
        double acc = 0.0;
        for (long long i = 0; i < z.size(); ++i) acc += std::exp(z[static_cast<std::size_t>(i)] - m);
        for (long long i = 0; i < z.size(); ++i) {
          const double p = std::exp(z[static_cast<std::size_t>(i)] - m) / acc;
          a.grad[static_cast<std::size_t>(i)] += g * (p - (static_cast<int>(i) == n.label ? 1.0 : 0.0));
        }
        return;
      }
    }
  }

  static long long select_offset(const std::vector<int>& shape, const std::vector<int>& idx) {
    long long off = 0;
    long long stride = Tensor::count(shape);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      stride /= shape[i];
      off += idx[i] * stride;
    }
    return off;
  }

  static void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out) {
    const bool avec = a.rank() == 1;
    const bool bvec = b.rank() == 1;
    const int m = avec ? 1 : (ta ? a.dim(1) : a.dim(0));
    const int kk = avec ? a.dim(0) : (ta ? a.dim(0) : a.dim(1));
    const int nn = bvec ? 1 : (tb ? b.dim(0) : b.dim(1));
    auto A = [&](int i, int k) { return avec ? a.at(k) : (ta ? a.at(k, i) : a.at(i, k)); };
    auto B = [&](int k, int j) { return bvec ? b.at(k) : (tb ? b.at(j, k) : b.at(k, j)); };
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < nn; ++j) {
        double acc = 0.0;
        for (int k = 0; k < kk; ++k) acc += A(i, k) * B(k, j);
        out[static_cast<std::size_t>(i) * nn + j] = acc;
      }
    }
  }

  void matmul_backward(Node& a, bool ta, Node& b, bool tb, const Tensor& g) {
    const bool avec = a.value.rank() == 1;
    const bool bvec = b.value.rank() == 1;
    const int m = avec ? 1 : (ta ? a.value.dim(1) : a.value.dim(0));
    const int kk = avec ? a.value.dim(0) : (ta ? a.value.dim(0) : a.value.dim(1));
    const int nn = bvec ? 1 : (tb ? b.value.dim(0) : b.value.dim(1));
    auto G = [&](int i, int j) { return g[static_cast<std::size_t>(i) * nn + j]; };
    auto A = [&](int i, int k) { return avec ? a.value.at(k) : (ta ? a.value.at(k, i) : a.value.at(i, k)); };
    auto B = [&](int k, int j) { return bvec ? b.value.at(k) : (tb ? b.value.at(j, k) : b.value.at(k, j)); };
    auto addA = [&](int i, int k, double v) {
      if (avec) a.grad.at(k) += v;
      else if (ta) a.grad.at(k, i) += v;
      else a.grad.at(i, k) += v;
    };
    auto addB = [&](int k, int j, double v) {
      if (bvec) b.grad.at(k) += v;
      else if (tb) b.grad.at(j, k) += v;
      else b.grad.at(k, j) += v;
    };
    for (int i = 0; i < m; ++i) {
      for (int k = 0; k < kk; ++k) {
        double acc = 0.0;
        for (int j = 0; j < nn; ++j) acc += G(i, j) * B(k, j);
        addA(i, k, acc);
      }
    }
    for (int k = 0; k < kk; ++k) {
      for (int j = 0; j < nn; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += A(i, k) * G(i, j);
        addB(k, j, acc);
      }
    }
  }
};

}  // namespace sap::ad
