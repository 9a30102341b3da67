#include "adarelu/tape.hpp"

#include <cmath>
#include <memory>

namespace adarelu {

Shape shape_from_dims(const std::vector<Index>& dims) {
  if (dims.empty() || dims.size() > 4) throw std::invalid_argument("parameter rank must be 1..4");
  Index d[4] = {1, 1, 1, 1};
  for (std::size_t i = 0; i < dims.size(); ++i) d[i] = dims[i];
  return {d[0], d[1], d[2], d[3]};
}

template <typename Scalar>
std::size_t ParameterStore<Scalar>::add(std::string name, std::vector<Index> dims, Tensor<Scalar> value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  require_same_shape(value.shape(), shape_from_dims(dims), "parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back(Parameter<Scalar>{std::move(name), std::move(dims), std::move(value)});
  return params_.size() - 1;
}

template <typename Scalar>
std::size_t ParameterStore<Scalar>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

template <typename Scalar>
Index ParameterStore<Scalar>::count(const std::string& prefix) const {
  Index total = 0;
  for (const auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) total += p.value.size();
  }
  return total;
}

template <typename Scalar>
Var ParamBinder<Scalar>::operator()(const std::string& name) {
  const std::size_t idx = store_.index_of(name);
  auto it = bound_.find(idx);
  if (it != bound_.end()) return it->second;
  const bool train = trainable_ && trainable_(name);
  Var v = train ? tape_.variable(store_[idx].value) : tape_.constant(store_[idx].value);
  bound_.emplace(idx, v);
  return v;
}

template <typename Scalar>
void ParamBinder<Scalar>::collect(Gradients<Scalar>& out, Scalar scale) const {
  out.resize(store_.size());
  for (const auto& [idx, var] : bound_) {
    if (!tape_.requires_grad(var)) continue;
    Tensor<Scalar> g = tape_.grad(var);
    if (out[idx].empty()) {
      out[idx] = Tensor<Scalar>(g.shape(), scale * g.array());
    } else {
      out[idx].array() += scale * g.array();
    }
  }
}

std::function<bool(const std::string&)> name_has_prefix(std::vector<std::string> prefixes) {
  return [prefixes = std::move(prefixes)](const std::string& name) {
    for (const auto& p : prefixes) {
      if (name.rfind(p, 0) == 0) return true;
    }
    return false;
  };
}

namespace ops {

namespace {

template <typename Scalar>
Eigen::Map<const Vector<Scalar>> as_vector(const Tensor<Scalar>& t) {
  return {t.data(), t.size()};
}

template <typename Scalar>
Eigen::Map<const MatrixRM<Scalar>> as_matrix(const Tensor<Scalar>& t) {
  return {t.data(), t.shape().n, t.size() / t.shape().n};
}

template <typename Scalar>
Tensor<Scalar> scalar_tensor(Scalar v) {
  return Tensor<Scalar>({1, 1, 1, 1}, {v});
}

}  // namespace

template <typename Scalar>
Var conv2d(Tape<Scalar>& t, Var x, Var weight, Var bias, Conv2dOptions options) {
  Tensor<Scalar> out = adarelu::conv2d(t.value(x), t.value(weight), as_vector(t.value(bias)), options);
  return t.record(std::move(out), {x, weight, bias}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    auto gr = conv2d_backward(tp.value(x), tp.value(weight), options, g);
    tp.accumulate(x, gr.input);
    tp.accumulate(weight, gr.weight);
    tp.accumulate(bias, Tensor<Scalar>(tp.value(bias).shape(), gr.bias.array()));
  });
}

template <typename Scalar>
Var struconv(Tape<Scalar>& t, Var x, Var raw_kernels, StructuralMode mode) {
  StruConvKernelBank<Scalar> bank{t.value(raw_kernels)};
  Tensor<Scalar> out = adarelu::struconv(t.value(x), bank, mode);
  return t.record(std::move(out), {x, raw_kernels}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    auto gr = struconv_backward(tp.value(x), StruConvKernelBank<Scalar>{tp.value(raw_kernels)}, mode, g);
    tp.accumulate(x, gr.input);
    tp.accumulate(raw_kernels, gr.raw_kernels);
  });
}

template <typename Scalar>
Var instance_norm(Tape<Scalar>& t, Var x) {
  auto r = instance_norm_forward(t.value(x));
  auto ctx = std::make_shared<InstanceNormContext<Scalar>>(std::move(r.context));
  return t.record(std::move(r.output), {x}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(x, instance_norm_backward(*ctx, g));
  });
}

template <typename Scalar>
Var adain(Tape<Scalar>& t, Var x, Var mu, Var sigma) {
  auto r = adain_forward(t.value(x), t.value(mu), t.value(sigma));
  auto ctx = std::make_shared<AdainContext<Scalar>>(std::move(r.context));
  return t.record(std::move(r.output), {x, mu, sigma}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    auto gr = adain_backward(*ctx, g);
    tp.accumulate(x, gr.input);
    tp.accumulate(mu, gr.mu);
    tp.accumulate(sigma, gr.sigma);
  });
}

template <typename Scalar>
Var linear(Tape<Scalar>& t, Var x, Var weight, Var bias) {
  Tensor<Scalar> out = adarelu::linear(t.value(x), as_matrix(t.value(weight)), as_vector(t.value(bias)));
  return t.record(std::move(out), {x, weight, bias}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    auto gr = linear_backward(tp.value(x), as_matrix(tp.value(weight)), g);
    tp.accumulate(x, gr.input);
    tp.accumulate(weight, Tensor<Scalar>(tp.value(weight).shape(),
                                         Eigen::Map<const typename Tensor<Scalar>::Array>(gr.weight.data(),
                                                                                          gr.weight.size())));
    tp.accumulate(bias, Tensor<Scalar>(tp.value(bias).shape(), gr.bias.array()));
  });
}

template <typename Scalar>
Var rectify(Tape<Scalar>& t, Var x, Var slopes) {
  Tensor<Scalar> out = adarelu::rectify(t.value(x), t.value(slopes));
  t.mark_kink(x);
  return t.record(std::move(out), {x, slopes}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    auto gr = rectify_backward(tp.value(x), tp.value(slopes), g);
    tp.accumulate(x, gr.input);
    tp.accumulate(slopes, gr.slopes);
  });
}

template <typename Scalar>
Var leaky_relu(Tape<Scalar>& t, Var x, Scalar slope) {
  const Shape& s = t.value(x).shape();
  Var slopes = t.constant(Tensor<Scalar>::constant({s.n, s.c, 1, 1}, slope));
  return rectify(t, x, slopes);
}

template <typename Scalar>
Var broadcast_batch(Tape<Scalar>& t, Var v, Index batch) {
  const Tensor<Scalar>& vv = t.value(v);
  const Index C = vv.size();
  Tensor<Scalar> out({batch, C, 1, 1});
  for (Index n = 0; n < batch; ++n) out.array().segment(n * C, C) = vv.array();
  return t.record(std::move(out), {v}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    Tensor<Scalar> gv(tp.value(v).shape());
    for (Index n = 0; n < batch; ++n) gv.array() += g.array().segment(n * C, C);
    tp.accumulate(v, gv);
  });
}

template <typename Scalar>
Var slice_channels(Tape<Scalar>& t, Var x, Index begin, Index count) {
  const Shape s = t.value(x).shape();
  if (begin < 0 || count < 1 || begin + count > s.c) throw std::invalid_argument("slice_channels: out of range");
  Tensor<Scalar> out({s.n, count, s.h, s.w});
  const Index p = s.plane();
  for (Index n = 0; n < s.n; ++n) {
    out.array().segment(n * count * p, count * p) = t.value(x).array().segment((n * s.c + begin) * p, count * p);
  }
  return t.record(std::move(out), {x}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(s);
    for (Index n = 0; n < s.n; ++n) {
      gx.array().segment((n * s.c + begin) * p, count * p) = g.array().segment(n * count * p, count * p);
    }
    tp.accumulate(x, gx);
  });
}

template <typename Scalar>
Var avg_pool2(Tape<Scalar>& t, Var x) {
  const Shape s = t.value(x).shape();
  return t.record(adarelu::avg_pool2(t.value(x)), {x}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(x, avg_pool2_backward(s, g));
  });
}

template <typename Scalar>
Var upsample_nearest2(Tape<Scalar>& t, Var x) {
  const Shape s = t.value(x).shape();
  return t.record(adarelu::upsample_nearest2(t.value(x)), {x}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(x, upsample_nearest2_backward(s, g));
  });
}

template <typename Scalar>
Var global_avg_pool(Tape<Scalar>& t, Var x) {
  const Shape s = t.value(x).shape();
  return t.record(adarelu::global_avg_pool(t.value(x)), {x}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(x, global_avg_pool_backward(s, g));
  });
}

template <typename Scalar>
Var add(Tape<Scalar>& t, Var a, Var b) {
  require_same_shape(t.value(a).shape(), t.value(b).shape(), "add");
  Tensor<Scalar> out(t.value(a).shape(), t.value(a).array() + t.value(b).array());
  return t.record(std::move(out), {a, b}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <typename Scalar>
Var scale(Tape<Scalar>& t, Var x, Scalar factor) {
  Tensor<Scalar> out(t.value(x).shape(), t.value(x).array() * factor);
  return t.record(std::move(out), {x}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(x, Tensor<Scalar>(g.shape(), g.array() * factor));
  });
}

template <typename Scalar>
Var tanh(Tape<Scalar>& t, Var x) {
  Tensor<Scalar> out(t.value(x).shape(), t.value(x).array().tanh());
  auto y = std::make_shared<Tensor<Scalar>>(out);
  return t.record(std::move(out), {x}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.accumulate(x, Tensor<Scalar>(g.shape(), g.array() * (Scalar(1) - y->array().square())));
  });
}

template <typename Scalar>
Var select_heads(Tape<Scalar>& t, const std::vector<Var>& heads, const std::vector<int>& domains) {
  if (heads.empty()) throw std::invalid_argument("select_heads: no heads");
  const Shape s = t.value(heads.front()).shape();
  if (static_cast<Index>(domains.size()) != s.n) throw std::invalid_argument("select_heads: domain count mismatch");
  const Index K = s.c * s.plane();
  Tensor<Scalar> out(s);
  for (Index n = 0; n < s.n; ++n) {
    const int d = domains[n];
    if (d < 0 || d >= static_cast<int>(heads.size())) throw std::out_of_range("domain out of range");
    require_same_shape(t.value(heads[d]).shape(), s, "select_heads");
    out.array().segment(n * K, K) = t.value(heads[d]).array().segment(n * K, K);
  }
  return t.record(std::move(out), heads, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    for (std::size_t h = 0; h < heads.size(); ++h) {
      if (!tp.requires_grad(heads[h])) continue;
      Tensor<Scalar> gh(s);
      bool any = false;
      for (Index n = 0; n < s.n; ++n) {
        if (domains[n] != static_cast<int>(h)) continue;
        gh.array().segment(n * K, K) = g.array().segment(n * K, K);
        any = true;
      }
      if (any) tp.accumulate(heads[h], gh);
    }
  });
}

template <typename Scalar>
Var softplus_mean(Tape<Scalar>& t, Var x, Scalar sign) {
  const auto& xa = t.value(x).array();
  const auto z = (sign * xa).eval();
  const Scalar value = (z.max(Scalar(0)) + (-z.abs()).exp().log1p()).mean();
  return t.record(scalar_tensor(value), {x}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const auto& xv = tp.value(x);
    const Scalar coef = g[0] * sign / static_cast<Scalar>(xv.size());
    auto sig = (Scalar(1) / (Scalar(1) + (-sign * xv.array()).exp())).eval();
    tp.accumulate(x, Tensor<Scalar>(xv.shape(), coef * sig));
  });
}

template <typename Scalar>
Var mean_abs_diff(Tape<Scalar>& t, Var a, Var b) {
  require_same_shape(t.value(a).shape(), t.value(b).shape(), "mean_abs_diff");
  Var d = t.record(Tensor<Scalar>(t.value(a).shape(), t.value(a).array() - t.value(b).array()), {a, b},
                   [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
                     tp.accumulate(a, g);
                     tp.accumulate(b, Tensor<Scalar>(g.shape(), -g.array()));
                   });
  t.mark_kink(d);
  const Scalar value = t.value(d).array().abs().mean();
  return t.record(scalar_tensor(value), {d}, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const auto& dv = tp.value(d);
    const Scalar coef = g[0] / static_cast<Scalar>(dv.size());
    tp.accumulate(d, Tensor<Scalar>(dv.shape(), coef * dv.array().sign()));
  });
}

template <typename Scalar>
Var weighted_sum(Tape<Scalar>& t, const std::vector<std::pair<Scalar, Var>>& terms) {
  Scalar value = 0;
  std::vector<Var> parents;
  for (const auto& [coef, v] : terms) {
    if (t.value(v).size() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
    value += coef * t.value(v)[0];
    parents.push_back(v);
  }
  return t.record(scalar_tensor(value), parents, [=](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    for (const auto& [coef, v] : terms) tp.accumulate(v, scalar_tensor(coef * g[0]));
  });
}

#define ADARELU_INSTANTIATE_OPS(S)                                                              \
  template Var conv2d(Tape<S>&, Var, Var, Var, Conv2dOptions);                                  \
  template Var struconv(Tape<S>&, Var, Var, StructuralMode);                                    \
  template Var instance_norm(Tape<S>&, Var);                                                    \
  template Var adain(Tape<S>&, Var, Var, Var);                                                  \
  template Var linear(Tape<S>&, Var, Var, Var);                                                 \
  template Var rectify(Tape<S>&, Var, Var);                                                     \
  template Var leaky_relu(Tape<S>&, Var, S);                                                    \
  template Var broadcast_batch(Tape<S>&, Var, Index);                                           \
  template Var slice_channels(Tape<S>&, Var, Index, Index);                                     \
  template Var avg_pool2(Tape<S>&, Var);                                                        \
  template Var upsample_nearest2(Tape<S>&, Var);                                                \
  template Var global_avg_pool(Tape<S>&, Var);                                                  \
  template Var add(Tape<S>&, Var, Var);                                                         \
  template Var scale(Tape<S>&, Var, S);                                                         \
  template Var tanh(Tape<S>&, Var);                                                             \
  template Var select_heads(Tape<S>&, const std::vector<Var>&, const std::vector<int>&);        \
  template Var softplus_mean(Tape<S>&, Var, S);                                                 \
  template Var mean_abs_diff(Tape<S>&, Var, Var);                                               \
  template Var weighted_sum(Tape<S>&, const std::vector<std::pair<S, Var>>&);

ADARELU_INSTANTIATE_OPS(float)
ADARELU_INSTANTIATE_OPS(double)

}  // namespace ops

template class ParameterStore<float>;
template class ParameterStore<double>;
template class ParamBinder<float>;
template class ParamBinder<double>;

}  // namespace adarelu
