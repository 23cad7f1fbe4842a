#pragma once

// Tape-based reverse-mode autodiff. Every operation appends a node holding
// its evaluated result. backward() walks the tape in reverse; vector-Jacobian
// products are themselves built from tape ops, so a computed gradient stays
// differentiable (needed to optimize the gradient-penalty term).
//
// The primitive set is closed under differentiation: the three convolution
// kernels are each other's adjoints, broadcast/reduce pairs are adjoint, and
// pointwise ops differentiate into pointwise ops.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "rdwn/kernels.hpp"
#include "rdwn/tensor.hpp"

namespace rdwn {

enum class Op {
  kLeaf,
  kConvFwd,
  kConvDx,
  kConvDw,
  kBiasBroadcast,
  kBiasSum,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kSquare,
  kSqrt,
  kLeakyRelu,
  kLeakyReluMaskMul,  // g * (x > 0 ? 1 : slope); mask taken from first input
  kSum,
  kMean,
  kSumPerBatch,
  kBroadcastBatch,
  kBroadcastFull,
  kUpsample,
  kUpsampleAdj,
  kReshape,
};

enum class UpsampleMode { kNearest, kBilinear };

struct OpAttrs {
  int stride = 1;
  int pad = 0;
  int factor = 1;
  UpsampleMode mode = UpsampleMode::kNearest;
  double scalar = 0.0;
  std::vector<int64_t> dims;  // target shape / original spatial dims, op-specific
};

struct Node {
  Op op = Op::kLeaf;
  std::array<int, 2> in = {-1, -1};
  OpAttrs attrs;
  Tensor out;
};

class Tape {
 public:
  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int i) const { return nodes_[i]; }

  /// Record a tensor value as a graph input (parameter, data, or constant).
  Tensor leaf(const Tensor& value) {
    Tensor t = value.detached();
    return record(Op::kLeaf, -1, -1, {}, std::move(t));
  }

  Tensor conv_fwd(const Tensor& x, const Tensor& w, int stride, int pad) {
    OpAttrs a;
    a.stride = stride;
    a.pad = pad;
    return record(Op::kConvFwd, id(x), id(w), a,
                  kernels::conv_fwd(x, w, stride, pad));
  }

  Tensor conv_dx(const Tensor& gy, const Tensor& w, int stride, int pad,
                 int64_t H, int64_t W) {
    OpAttrs a;
    a.stride = stride;
    a.pad = pad;
    a.dims = {H, W};
    return record(Op::kConvDx, id(gy), id(w), a,
                  kernels::conv_dx(gy, w, stride, pad, H, W));
  }

  Tensor conv_dw(const Tensor& x, const Tensor& gy, int stride, int pad,
                 int64_t kh, int64_t kw) {
    OpAttrs a;
    a.stride = stride;
    a.pad = pad;
    a.dims = {kh, kw};
    return record(Op::kConvDw, id(x), id(gy), a,
                  kernels::conv_dw(x, gy, stride, pad, kh, kw));
  }

  Tensor bias_broadcast(const Tensor& bias, const std::vector<int64_t>& shape) {
    OpAttrs a;
    a.dims = shape;
    return record(Op::kBiasBroadcast, id(bias), -1, a,
                  kernels::bias_broadcast(bias, shape));
  }

  Tensor bias_sum(const Tensor& g) {
    OpAttrs a;
    a.dims = g.shape();
    return record(Op::kBiasSum, id(g), -1, a, kernels::bias_sum(g));
  }

  Tensor add(const Tensor& x, const Tensor& y) { return binary(Op::kAdd, x, y); }
  Tensor sub(const Tensor& x, const Tensor& y) { return binary(Op::kSub, x, y); }
  Tensor mul(const Tensor& x, const Tensor& y) { return binary(Op::kMul, x, y); }
  Tensor div(const Tensor& x, const Tensor& y) { return binary(Op::kDiv, x, y); }

  Tensor scale(const Tensor& x, double c) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = c * x.data()[i];
    OpAttrs a;
    a.scalar = c;
    return record(Op::kScale, id(x), -1, a, std::move(out));
  }

  Tensor neg(const Tensor& x) { return scale(x, -1.0); }

  Tensor add_scalar(const Tensor& x, double c) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] + c;
    OpAttrs a;
    a.scalar = c;
    return record(Op::kAddScalar, id(x), -1, a, std::move(out));
  }

  Tensor square(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i)
      out.data()[i] = x.data()[i] * x.data()[i];
    return record(Op::kSquare, id(x), -1, {}, std::move(out));
  }

  Tensor sqrt(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
      if (x.data()[i] < 0) throw Error("sqrt of negative value");
      out.data()[i] = std::sqrt(x.data()[i]);
    }
    return record(Op::kSqrt, id(x), -1, {}, std::move(out));
  }

  Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      out.data()[i] = v > 0 ? v : slope * v;
    }
    OpAttrs a;
    a.scalar = slope;
    return record(Op::kLeakyRelu, id(x), -1, a, std::move(out));
  }

  Tensor leaky_relu_mask_mul(const Tensor& x, const Tensor& g, double slope) {
    if (!same_shape(x, g)) throw Error("leaky_relu_mask_mul: shape mismatch");
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i)
      out.data()[i] = g.data()[i] * (x.data()[i] > 0 ? 1.0 : slope);
    OpAttrs a;
    a.scalar = slope;
    return record(Op::kLeakyReluMaskMul, id(x), id(g), a, std::move(out));
  }

  Tensor sum(const Tensor& x) {
    if (x.size() == 0) throw Error("reduce of empty tensor");
    double s = 0;
    for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
    OpAttrs a;
    a.dims = x.shape();
    return record(Op::kSum, id(x), -1, a, Tensor::scalar(s));
  }

  Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw Error("reduce of empty tensor");
    double s = 0;
    for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
    OpAttrs a;
    a.dims = x.shape();
    return record(Op::kMean, id(x), -1, a, Tensor::scalar(s / x.size()));
  }

  /// [B, ...] -> [B], summing all non-batch axes.
  Tensor sum_per_batch(const Tensor& x) {
    if (x.rank() < 2) throw Error("sum_per_batch requires rank >= 2");
    const int64_t B = x.dim(0), N = x.size() / B;
    Tensor out({B});
    for (int64_t b = 0; b < B; ++b) {
      double s = 0;
      const double* p = x.data() + b * N;
      for (int64_t k = 0; k < N; ++k) s += p[k];
      out.data()[b] = s;
    }
    OpAttrs a;
    a.dims = x.shape();
    return record(Op::kSumPerBatch, id(x), -1, a, std::move(out));
  }

  /// [B] -> shape (first dim B), replicating per batch element.
  Tensor broadcast_batch(const Tensor& v, const std::vector<int64_t>& shape) {
    if (v.rank() != 1 || shape.empty() || v.dim(0) != shape[0])
      throw Error("broadcast_batch: batch size mismatch");
    Tensor out(shape);
    const int64_t B = shape[0], N = out.size() / B;
    for (int64_t b = 0; b < B; ++b)
      std::fill_n(out.data() + b * N, N, v.data()[b]);
    OpAttrs a;
    a.dims = shape;
    return record(Op::kBroadcastBatch, id(v), -1, a, std::move(out));
  }

  Tensor broadcast_full(const Tensor& s, const std::vector<int64_t>& shape) {
    if (s.size() != 1) throw Error("broadcast_full: scalar expected");
    Tensor out = Tensor::full(shape, s.item());
    OpAttrs a;
    a.dims = shape;
    return record(Op::kBroadcastFull, id(s), -1, a, std::move(out));
  }

  Tensor upsample(const Tensor& x, int factor, UpsampleMode mode) {
    if (x.rank() != 4) throw Error("upsample: rank-4 input expected");
    if (factor < 1) throw Error("upsample: factor must be >= 1");
    Tensor out = mode == UpsampleMode::kNearest
                     ? kernels::upsample_nearest(x, factor)
                     : kernels::upsample_bilinear(x, factor);
    OpAttrs a;
    a.factor = factor;
    a.mode = mode;
    return record(Op::kUpsample, id(x), -1, a, std::move(out));
  }

  Tensor upsample_adj(const Tensor& g, int factor, UpsampleMode mode) {
    Tensor out = mode == UpsampleMode::kNearest
                     ? kernels::upsample_nearest_adj(g, factor)
                     : kernels::upsample_bilinear_adj(g, factor);
    OpAttrs a;
    a.factor = factor;
    a.mode = mode;
    return record(Op::kUpsampleAdj, id(g), -1, a, std::move(out));
  }

  Tensor reshape(const Tensor& x, const std::vector<int64_t>& shape) {
    if (Tensor::count(shape) != x.size()) throw Error("reshape: size mismatch");
    Tensor out(shape, std::vector<double>(x.data(), x.data() + x.size()));
    OpAttrs a;
    a.dims = x.shape();
    return record(Op::kReshape, id(x), -1, a, std::move(out));
  }

  /// Reverse accumulation from a scalar output to each tensor in wrt.
  /// With create_graph the returned gradients stay attached to this tape and
  /// can be differentiated again; otherwise they are detached values.
  std::vector<Tensor> backward(const Tensor& output, std::span<const Tensor> wrt,
                               bool create_graph = false) {
    if (output.size() != 1) throw Error("backward: output must be scalar");
    if (!output.attached() || output.tape() != this)
      throw Error("backward: output not recorded on this tape");
    for (const Tensor& t : wrt)
      if (!t.attached() || t.tape() != this)
        throw Error("backward: tensor unreachable (not recorded on this tape)");

    const int out_node = output.node();
    // Nodes that lie on a path from some wrt leaf toward the output.
    std::vector<char> needed(out_node + 1, 0);
    for (const Tensor& t : wrt)
      if (t.node() <= out_node) needed[t.node()] = 1;
    for (int i = 0; i <= out_node; ++i) {
      const Node& n = nodes_[i];
      for (int in : n.in)
        if (in >= 0 && needed[in]) needed[i] = 1;
    }

    std::vector<std::optional<Tensor>> adj(out_node + 1);
    adj[out_node] = leaf(Tensor::scalar(1.0));
    for (int i = out_node; i >= 0; --i) {
      if (!adj[i] || !needed[i]) continue;
      const Node n = nodes_[i];  // copy: vjp below may reallocate nodes_
      if (n.op == Op::kLeaf) continue;
      for (int slot = 0; slot < 2; ++slot) {
        const int in = n.in[slot];
        if (in < 0 || !needed[in]) continue;
        std::optional<Tensor> g = vjp(n, *adj[i], slot);
        if (!g) continue;
        adj[in] = adj[in] ? add(*adj[in], *g) : *g;
      }
    }

    std::vector<Tensor> grads;
    grads.reserve(wrt.size());
    for (const Tensor& t : wrt) {
      Tensor g = (t.node() <= out_node && adj[t.node()])
                     ? *adj[t.node()]
                     : leaf(Tensor(t.shape()));  // no path: zero gradient
      grads.push_back(create_graph ? g : g.detached());
    }
    return grads;
  }

 private:
  int id(const Tensor& t) {
    if (!t.attached()) throw Error("tape op on detached tensor");
    if (t.tape() != this) throw Error("tape op on tensor from another tape");
    return t.node();
  }

  Tensor record(Op op, int in0, int in1, OpAttrs attrs, Tensor out) {
    for (double v : std::span(out.data(), (size_t)out.size()))
      if (!std::isfinite(v))
        throw Error("non-finite value produced by forward op");
    out.attach(this, size());
    nodes_.push_back(Node{op, {in0, in1}, std::move(attrs), out});
    return out;
  }

  Tensor binary(Op op, const Tensor& x, const Tensor& y) {
    if (!same_shape(x, y))
      throw Error("elementwise: shape mismatch " + shape_str(x.shape()) +
                  " vs " + shape_str(y.shape()));
    Tensor out(x.shape());
    const double* a = x.data();
    const double* b = y.data();
    double* o = out.data();
    switch (op) {
      case Op::kAdd:
        for (int64_t i = 0; i < x.size(); ++i) o[i] = a[i] + b[i];
        break;
      case Op::kSub:
        for (int64_t i = 0; i < x.size(); ++i) o[i] = a[i] - b[i];
        break;
      case Op::kMul:
        for (int64_t i = 0; i < x.size(); ++i) o[i] = a[i] * b[i];
        break;
      case Op::kDiv:
        for (int64_t i = 0; i < x.size(); ++i) o[i] = a[i] / b[i];
        break;
      default:
        throw Error("not a binary op");
    }
    return record(op, id(x), id(y), {}, std::move(out));
  }

  Tensor input(const Node& n, int slot) { return nodes_[n.in[slot]].out; }

  // Vector-Jacobian product of node n w.r.t. input `slot`, given the output
  // adjoint g. Returns nullopt where the derivative is identically zero.
  std::optional<Tensor> vjp(const Node& n, const Tensor& g, int slot) {
    switch (n.op) {
      case Op::kLeaf:
        return std::nullopt;
      case Op::kConvFwd: {
        const Tensor x = input(n, 0), w = input(n, 1);
        if (slot == 0)
          return conv_dx(g, w, n.attrs.stride, n.attrs.pad, x.dim(2), x.dim(3));
        return conv_dw(x, g, n.attrs.stride, n.attrs.pad, w.dim(2), w.dim(3));
      }
      case Op::kConvDx: {
        const Tensor gy = input(n, 0), w = input(n, 1);
        if (slot == 0) return conv_fwd(g, w, n.attrs.stride, n.attrs.pad);
        return conv_dw(g, gy, n.attrs.stride, n.attrs.pad, w.dim(2), w.dim(3));
      }
      case Op::kConvDw: {
        const Tensor x = input(n, 0), gy = input(n, 1);
        if (slot == 0)
          return conv_dx(gy, g, n.attrs.stride, n.attrs.pad, x.dim(2), x.dim(3));
        return conv_fwd(x, g, n.attrs.stride, n.attrs.pad);
      }
      case Op::kBiasBroadcast:
        return bias_sum(g);
      case Op::kBiasSum:
        return bias_broadcast(g, n.attrs.dims);
      case Op::kAdd:
        return g;
      case Op::kSub:
        return slot == 0 ? g : neg(g);
      case Op::kMul:
        return mul(g, input(n, 1 - slot));
      case Op::kDiv: {
        const Tensor a = input(n, 0), b = input(n, 1);
        if (slot == 0) return div(g, b);
        return neg(div(mul(g, a), mul(b, b)));
      }
      case Op::kScale:
        return scale(g, n.attrs.scalar);
      case Op::kAddScalar:
        return g;
      case Op::kSquare:
        return scale(mul(g, input(n, 0)), 2.0);
      case Op::kSqrt:
        return div(scale(g, 0.5), n.out);
      case Op::kLeakyRelu:
        return leaky_relu_mask_mul(input(n, 0), g, n.attrs.scalar);
      case Op::kLeakyReluMaskMul:
        // d/dx is zero almost everywhere; d/dg reapplies the mask.
        if (slot == 0) return std::nullopt;
        return leaky_relu_mask_mul(input(n, 0), g, n.attrs.scalar);
      case Op::kSum:
        return broadcast_full(g, n.attrs.dims);
      case Op::kMean:
        return scale(broadcast_full(g, n.attrs.dims),
                     1.0 / Tensor::count(n.attrs.dims));
      case Op::kSumPerBatch:
        return broadcast_batch(g, n.attrs.dims);
      case Op::kBroadcastBatch:
        return sum_per_batch(g);
      case Op::kBroadcastFull:
        return sum(g);
      case Op::kUpsample:
        return upsample_adj(g, n.attrs.factor, n.attrs.mode);
      case Op::kUpsampleAdj:
        return upsample(g, n.attrs.factor, n.attrs.mode);
      case Op::kReshape:
        return reshape(g, n.attrs.dims);
    }
    throw Error("vjp: unhandled op");
  }

  std::vector<Node> nodes_;
};

}  // namespace rdwn
