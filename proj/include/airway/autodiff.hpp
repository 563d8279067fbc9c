#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "airway/errors.hpp"

namespace airway::ad {

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

/// Tensor extents, up to 5 axes. Memory is row-major over the shape tuple
/// (last axis fastest); spatial tensors are ordered (batch, channel, z, y, x)
/// so the x axis is contiguous, matching the Volume3 layout.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    if (dims.size() > 5) throw ShapeError("Shape: at most 5 axes");
    for (int v : dims) d_[rank_++] = v;
  }
  static Shape scalar() { return Shape{}; }

  int rank() const { return rank_; }
  int operator[](int i) const { return d_[i]; }
  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= d_[i];
    return n;
  }
  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (d_[i] != o.d_[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < rank_; ++i) s += (i ? "," : "") + std::to_string(d_[i]);
    return s + ")";
  }

 private:
  std::array<int, 5> d_{1, 1, 1, 1, 1};
  int rank_ = 0;
};

template <class S>
struct TensorData {
  Shape shape;
  ArrayX<S> data;

  TensorData() = default;
  TensorData(Shape sh, ArrayX<S> d) : shape(sh), data(std::move(d)) {}
  static TensorData zeros(Shape sh) {
    return TensorData(sh, ArrayX<S>::Zero(sh.numel()));
  }
  template <class T>
  TensorData<T> cast() const {
    return TensorData<T>(shape, data.template cast<T>());
  }
};

/// Named trainable tensor living outside any tape.
template <class S>
struct Param {
  std::string name;
  Shape shape;
  ArrayX<S> value;
  ArrayX<S> grad;  // sized on first accumulation

  void zero_grad() {
    if (grad.size() > 0) grad.setZero();
  }
  void accumulate(const ArrayX<S>& g) {
    if (grad.size() == 0) grad = ArrayX<S>::Zero(value.size());
    grad += g;
  }
};

template <class S>
class ParamStore {
 public:
  Param<S>& add(const std::string& name, Shape shape) {
    for (const auto& p : params_) {
      if (p->name == name) throw ConfigError("duplicate parameter name: " + name);
    }
    auto p = std::make_unique<Param<S>>();
    p->name = name;
    p->shape = shape;
    p->value = ArrayX<S>::Zero(shape.numel());
    params_.push_back(std::move(p));
    return *params_.back();
  }
  Param<S>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  std::vector<std::unique_ptr<Param<S>>>& items() { return params_; }
  const std::vector<std::unique_ptr<Param<S>>>& items() const { return params_; }
  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }
  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Param<S>>> params_;
};

template <class S>
class Tape;

/// Lightweight handle to a node on a tape.
template <class S>
class Value {
 public:
  Value() = default;
  Value(Tape<S>* t, int n) : tape_(t), node_(n) {}

  Tape<S>* tape() const { return tape_; }
  int node() const { return node_; }
  bool valid() const { return tape_ != nullptr; }
  const Shape& shape() const;
  const ArrayX<S>& array() const;

 private:
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order by construction; backward() sweeps it in reverse.
template <class S>
class Tape {
 public:
  struct Node {
    Shape shape;
    ArrayX<S> value;
    bool requires_grad = false;
    std::function<void(Tape&)> backward;  // empty for leaves
  };

  Value<S> leaf(TensorData<S> t, bool requires_grad = false) {
    return make_node(t.shape, std::move(t.data), requires_grad, {});
  }
  /// Leaf bound to an external parameter: backward() adds the node gradient
  /// into `p.grad`.
  Value<S> leaf_param(Param<S>& p) {
    Value<S> v = make_node(p.shape, p.value, true, {});
    bindings_.push_back({v.node(), &p});
    return v;
  }

  Value<S> make_node(Shape shape, ArrayX<S> value, bool requires_grad,
                     std::function<void(Tape&)> backward) {
    if (value.size() != shape.numel()) {
      throw ShapeError("tape node: data length does not match shape " + shape.str());
    }
    nodes_.push_back(Node{shape, std::move(value), requires_grad, std::move(backward)});
    grads_.emplace_back();
    return Value<S>(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  bool has_grad(int i) const { return grads_[static_cast<std::size_t>(i)].size() > 0; }
  ArrayX<S>& grad(int i) {
    auto& g = grads_[static_cast<std::size_t>(i)];
    if (g.size() == 0) g = ArrayX<S>::Zero(nodes_[static_cast<std::size_t>(i)].value.size());
    return g;
  }
  void accumulate_grad(int i, const ArrayX<S>& g) {
    if (!nodes_[static_cast<std::size_t>(i)].requires_grad) return;
    grad(i) += g;
  }

  /// Reverse sweep from a scalar loss; afterwards scatters node gradients
  /// into bound parameters.
  void backward(Value<S> loss) {
    if (loss.tape() != this) throw ShapeError("backward: value from another tape");
    if (loss.shape().numel() != 1) throw ShapeError("backward: loss must be scalar");
    grad(loss.node()).setConstant(S(1));
    for (int i = loss.node(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || !n.backward) continue;
      if (!has_grad(i)) continue;
      n.backward(*this);
    }
    for (const auto& [node_idx, param] : bindings_) {
      if (has_grad(node_idx)) param->accumulate(grad(node_idx));
    }
  }

 private:
  std::vector<Node> nodes_;
  std::vector<ArrayX<S>> grads_;
  std::vector<std::pair<int, Param<S>*>> bindings_;
};

template <class S>
const Shape& Value<S>::shape() const {
  return tape_->node(node_).shape;
}
template <class S>
const ArrayX<S>& Value<S>::array() const {
  return tape_->node(node_).value;
}

// ---------------------------------------------------------------------------
// Operator set. All functions build one (or a few) tape nodes and register
// analytic backward closures.
// ---------------------------------------------------------------------------

struct Conv3dOpts {
  int stride = 1;
  int pad = 0;
};

struct PoolOpts {
  int kernel = 2;
  int stride = 2;
  int pad = 0;
};

template <class S> Value<S> add(Value<S> a, Value<S> b);
template <class S> Value<S> sub(Value<S> a, Value<S> b);
template <class S> Value<S> mul(Value<S> a, Value<S> b);
template <class S> Value<S> div(Value<S> a, Value<S> b);
template <class S> Value<S> add_scalar(Value<S> a, S s);
template <class S> Value<S> mul_scalar(Value<S> a, S s);
template <class S> Value<S> sum(Value<S> a);
template <class S> Value<S> mean(Value<S> a);
template <class S> Value<S> tanh(Value<S> a);
template <class S> Value<S> sigmoid(Value<S> a);
template <class S> Value<S> leaky_relu(Value<S> a, S slope);
template <class S> Value<S> relu(Value<S> a);
template <class S> Value<S> softmax_last(Value<S> a);
template <class S> Value<S> reshape(Value<S> a, Shape target);
template <class S> Value<S> permute(Value<S> a, const std::vector<int>& perm);
template <class S> Value<S> concat_channels(Value<S> a, Value<S> b);
template <class S> Value<S> detach(Value<S> a);

/// x: (B, Cin, Z, Y, X), w: (Cout, Cin, kz, ky, kx), bias: (Cout).
template <class S> Value<S> conv3d(Value<S> x, Value<S> w, Value<S> bias, Conv3dOpts opts);

/// Pool padding semantics: max pads with -inf, min with +inf, avg excludes
/// padded positions from the count.
template <class S> Value<S> max_pool3d(Value<S> x, PoolOpts opts);
template <class S> Value<S> min_pool3d(Value<S> x, PoolOpts opts);
template <class S> Value<S> avg_pool3d(Value<S> x, PoolOpts opts);

template <class S> Value<S> upsample_nearest2x(Value<S> x);

/// x: (..., In) -> (..., Out); w: (Out, In), bias: (Out).
template <class S> Value<S> linear(Value<S> x, Value<S> w, Value<S> bias);

/// Batched matrix products over the last two axes.
template <class S> Value<S> matmul(Value<S> a, Value<S> b);     // (...,m,k)x(...,k,n)
template <class S> Value<S> matmul_nt(Value<S> a, Value<S> b);  // (...,m,k)x(...,n,k)

/// (B, C, Z, Y, X) -> (B, T, C*pz*py*px); tokens ordered x-fastest over the
/// patch grid.
template <class S> Value<S> patchify3d(Value<S> x, int px, int py, int pz);

/// Token utilities for transformer stacks, all on (B, T, D) tensors.
template <class S> Value<S> concat_tokens(Value<S> a, Value<S> b);  // along axis 1
template <class S> Value<S> select_token(Value<S> x, int token);    // -> (B, D)
/// Repeat a leading batch of 1 into B copies; backward sums over copies.
template <class S> Value<S> tile_batch(Value<S> x, int batch);

/// Normalize over the last axis; gamma/beta shaped (D).
template <class S> Value<S> layer_norm(Value<S> x, Value<S> gamma, Value<S> beta, S eps = S(1e-5));

/// Normalize each (batch, channel) slice over its spatial extent;
/// gamma/beta shaped (C).
template <class S> Value<S> instance_norm(Value<S> x, Value<S> gamma, Value<S> beta,
                                          S eps = S(1e-5));

/// Numerically stable binary cross-entropy on logits, mean-reduced.
/// Targets must not require gradients.
template <class S> Value<S> bce_with_logits_mean(Value<S> logits, Value<S> targets);
template <class S> Value<S> l1_mean(Value<S> a, Value<S> b);

/// Standard scaled dot-product multi-head attention over (B, T, D) tokens
/// (a plain (T, D) input is treated as batch 1). Weights are (D, D),
/// biases (D).
template <class S>
Value<S> multi_head_attention(Value<S> x, Value<S> wq, Value<S> bq, Value<S> wk, Value<S> bk,
                              Value<S> wv, Value<S> bv, Value<S> wo, Value<S> bo, int heads);

// ---------------------------------------------------------------------------
// Gradient certification
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped_kinks = 0;
};

/// Central finite differences against the analytic gradient, element by
/// element over every input. `f` must return a scalar. Elements sitting on
/// non-differentiable kinks (detected by step-halving disagreement) are
/// skipped and reported.
GradCheckReport grad_check(
    const std::function<Value<double>(Tape<double>&, const std::vector<Value<double>>&)>& f,
    std::vector<TensorData<double>> inputs, double eps = 1e-3, double tol = 1e-4);

}  // namespace airway::ad
