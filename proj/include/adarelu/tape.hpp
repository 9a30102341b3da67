#pragma once

#include "adarelu/layers.hpp"

#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace adarelu {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Reverse-mode recording of layer calls. Each recorded node keeps its value and a
/// closure that pushes its output gradient to its parents using the layer's analytic
/// backward. Nodes whose parents need no gradient are recorded without a closure.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>&)>;

  Var constant(Tensor<Scalar> value) { return push(std::move(value), false, nullptr); }
  Var variable(Tensor<Scalar> value) { return push(std::move(value), true, nullptr); }

  Var record(Tensor<Scalar> value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }
  Var record(Tensor<Scalar> value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<Scalar>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient reached by the last backward pass; a zero tensor when none arrived.
  Tensor<Scalar> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<Scalar>(n.value.shape()) : n.grad;
  }

  void accumulate(Var v, const Tensor<Scalar>& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    require_same_shape(g.shape(), n.value.shape(), "gradient accumulation");
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      n.grad.array() += g.array();
    }
  }

  /// Back-propagate `seed` from `root`. Clears gradients from any previous pass, so one
  /// recording can be differentiated against several seeds.
  void backward(Var root, const Tensor<Scalar>& seed) {
    for (Node& n : nodes_) n.grad = Tensor<Scalar>();
    require_same_shape(seed.shape(), value(root).shape(), "backward seed");
    accumulate(root, seed);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      const Tensor<Scalar> g = n.grad;
      n.backward(*this, g);
    }
  }
  void backward(Var root) { backward(root, Tensor<Scalar>::constant(value(root).shape(), Scalar(1))); }

  /// Rectifier inputs, recorded so finite-difference probes can steer clear of kinks.
  void mark_kink(Var pre_activation) { kinks_.push_back(pre_activation); }
  const std::vector<Var>& kinks() const { return kinks_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor<Scalar> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<Scalar>(), requires_grad, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<Var> kinks_;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Parameter {
  std::string name;
  std::vector<Index> dims;  // logical shape, rank 1..4
  Tensor<Scalar> value;     // dims padded with trailing ones
};

Shape shape_from_dims(const std::vector<Index>& dims);

/// Ordered, named parameter arrays.
template <typename Scalar>
class ParameterStore {
 public:
  std::size_t add(std::string name, std::vector<Index> dims, Tensor<Scalar> value);
  std::size_t add(std::string name, std::vector<Index> dims) {
    return add(std::move(name), dims, Tensor<Scalar>(shape_from_dims(dims)));
  }

  std::size_t size() const { return params_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  Tensor<Scalar>& at(const std::string& name) { return params_[index_of(name)].value; }
  const Tensor<Scalar>& at(const std::string& name) const { return params_[index_of(name)].value; }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Element count over parameters whose names start with `prefix`.
  Index count(const std::string& prefix = "") const;

 private:
  std::vector<Parameter<Scalar>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Gradients aligned with a ParameterStore; empty entries received none.
template <typename Scalar>
using Gradients = std::vector<Tensor<Scalar>>;

/// Binds store parameters onto a tape, once per name. Parameters accepted by
/// `trainable` become gradient-carrying variables; the rest enter as constants.
template <typename Scalar>
class ParamBinder {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  ParamBinder(Tape<Scalar>& tape, const ParameterStore<Scalar>& store, Predicate trainable = nullptr)
      : tape_(tape), store_(store), trainable_(std::move(trainable)) {}

  Var operator()(const std::string& name);
  /// Route `name` to an existing tape value instead of the stored array.
  void bind(const std::string& name, Var v) { bound_[store_.index_of(name)] = v; }
  Tape<Scalar>& tape() { return tape_; }
  const ParameterStore<Scalar>& store() const { return store_; }

  /// Add the gradients of every bound trainable parameter into `out` (resized to the store).
  void collect(Gradients<Scalar>& out, Scalar scale = Scalar(1)) const;

 private:
  Tape<Scalar>& tape_;
  const ParameterStore<Scalar>& store_;
  Predicate trainable_;
  std::map<std::size_t, Var> bound_;
};

/// Predicate accepting names that start with any of `prefixes`.
std::function<bool(const std::string&)> name_has_prefix(std::vector<std::string> prefixes);

// ---------------------------------------------------------------------------
// Recorded operations
// ---------------------------------------------------------------------------

namespace ops {

template <typename Scalar>
Var conv2d(Tape<Scalar>& t, Var x, Var weight, Var bias, Conv2dOptions options);
/// Raw kernels (C,1,KH,KW); struconv mode normalizes them inside the recorded op.
template <typename Scalar>
Var struconv(Tape<Scalar>& t, Var x, Var raw_kernels, StructuralMode mode);
template <typename Scalar>
Var instance_norm(Tape<Scalar>& t, Var x);
template <typename Scalar>
Var adain(Tape<Scalar>& t, Var x, Var mu, Var sigma);
/// weight (O, I, 1, 1), bias (O, 1, 1, 1); x is (N, I, 1, 1) or anything with I elements per sample.
template <typename Scalar>
Var linear(Tape<Scalar>& t, Var x, Var weight, Var bias);
/// Per-sample slopes (N, C, 1, 1); marks x as a kink site.
template <typename Scalar>
Var rectify(Tape<Scalar>& t, Var x, Var slopes);
template <typename Scalar>
Var leaky_relu(Tape<Scalar>& t, Var x, Scalar slope);
/// (C, 1, 1, 1) -> (N, C, 1, 1).
template <typename Scalar>
Var broadcast_batch(Tape<Scalar>& t, Var v, Index batch);
template <typename Scalar>
Var slice_channels(Tape<Scalar>& t, Var x, Index begin, Index count);
template <typename Scalar>
Var avg_pool2(Tape<Scalar>& t, Var x);
template <typename Scalar>
Var upsample_nearest2(Tape<Scalar>& t, Var x);
template <typename Scalar>
Var global_avg_pool(Tape<Scalar>& t, Var x);
template <typename Scalar>
Var add(Tape<Scalar>& t, Var a, Var b);
template <typename Scalar>
Var scale(Tape<Scalar>& t, Var x, Scalar factor);
template <typename Scalar>
Var tanh(Tape<Scalar>& t, Var x);
/// Row i of the result is row i of heads[domains[i]]; every head is (N, K, 1, 1).
template <typename Scalar>
Var select_heads(Tape<Scalar>& t, const std::vector<Var>& heads, const std::vector<int>& domains);
/// Scalar mean of softplus(sign * x).
template <typename Scalar>
Var softplus_mean(Tape<Scalar>& t, Var x, Scalar sign);
/// Scalar mean |a - b|; the subgradient at a == b is zero.
template <typename Scalar>
Var mean_abs_diff(Tape<Scalar>& t, Var a, Var b);
/// Scalar sum of coefficient * term over scalar terms.
template <typename Scalar>
Var weighted_sum(Tape<Scalar>& t, const std::vector<std::pair<Scalar, Var>>& terms);

}  // namespace ops

}  // namespace adarelu
