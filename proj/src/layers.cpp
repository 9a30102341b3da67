#include "adarelu/layers.hpp"

#include <cmath>

namespace adarelu {

namespace {

Shape conv_output_shape(const Shape& in, const Shape& weight, Conv2dOptions o) {
  if (weight.c != in.c) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(in.c) + " channels, kernel expects " +
                                std::to_string(weight.c));
  }
  if (o.padding < 0 || o.stride < 1) throw std::invalid_argument("conv2d: invalid stride/padding");
  return {in.n, weight.n, conv_output_extent(in.h, weight.h, o.stride, o.padding),
          conv_output_extent(in.w, weight.w, o.stride, o.padding)};
}

// Rows index (input channel, kernel row, kernel col); columns index (sample, output pixel).
template <typename Scalar>
MatrixRM<Scalar> im2col(const Tensor<Scalar>& x, Index kh, Index kw, Conv2dOptions o, Index oh, Index ow) {
  const Shape& s = x.shape();
  const Index ohw = oh * ow;
  MatrixRM<Scalar> cols = MatrixRM<Scalar>::Zero(s.c * kh * kw, s.n * ohw);
  for (Index n = 0; n < s.n; ++n) {
    for (Index ci = 0; ci < s.c; ++ci) {
      for (Index ki = 0; ki < kh; ++ki) {
        for (Index kj = 0; kj < kw; ++kj) {
          Scalar* dst = cols.row((ci * kh + ki) * kw + kj).data() + n * ohw;
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * o.stride - o.padding + ki;
            if (iy < 0 || iy >= s.h) continue;
            const Scalar* src = x.data() + x.offset(n, ci, iy, 0);
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * o.stride - o.padding + kj;
              if (ix >= 0 && ix < s.w) dst[oy * ow + ox] = src[ix];
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im(const MatrixRM<Scalar>& cols, Tensor<Scalar>& x, Index kh, Index kw, Conv2dOptions o, Index oh,
            Index ow) {
  const Shape& s = x.shape();
  const Index ohw = oh * ow;
  for (Index n = 0; n < s.n; ++n) {
    for (Index ci = 0; ci < s.c; ++ci) {
      for (Index ki = 0; ki < kh; ++ki) {
        for (Index kj = 0; kj < kw; ++kj) {
          const Scalar* src = cols.row((ci * kh + ki) * kw + kj).data() + n * ohw;
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * o.stride - o.padding + ki;
            if (iy < 0 || iy >= s.h) continue;
            Scalar* dst = x.data() + x.offset(n, ci, iy, 0);
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * o.stride - o.padding + kj;
              if (ix >= 0 && ix < s.w) dst[ix] += src[oy * ow + ox];
            }
          }
        }
      }
    }
  }
}

void require_odd_kernel(const Shape& k) {
  if (k.c != 1 || k.h % 2 == 0 || k.w % 2 == 0) {
    throw std::invalid_argument("depthwise kernels must be (C, 1, odd, odd), got " + k.str());
  }
}

void require_style_params(const Shape& x, const Shape& p, const std::string& what) {
  if (p.n != x.n || p.c != x.c || p.h != 1 || p.w != 1) {
    throw std::invalid_argument(what + ": expected per-channel parameters " + Shape{x.n, x.c, 1, 1}.str() +
                                ", got " + p.str());
  }
}

}  // namespace

Index conv_output_extent(Index input, Index kernel, int stride, int padding) {
  const Index out = (input + 2 * padding - kernel) / stride + 1;
  if (input + 2 * padding < kernel || out < 1) throw std::invalid_argument("conv2d: output dimension < 1");
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Eigen::Ref<const Vector<std::type_identity_t<Scalar>>>& bias, Conv2dOptions options) {
  const Shape out_shape = conv_output_shape(input.shape(), weight.shape(), options);
  if (bias.size() != out_shape.c) throw std::invalid_argument("conv2d: bias length mismatch");
  const Shape& ks = weight.shape();
  const Index K = ks.c * ks.h * ks.w;
  const Index ohw = out_shape.plane();
  const MatrixRM<Scalar> cols = im2col(input, ks.h, ks.w, options, out_shape.h, out_shape.w);
  Eigen::Map<const MatrixRM<Scalar>> w(weight.data(), ks.n, K);
  const MatrixRM<Scalar> out_mat = w * cols;
  Tensor<Scalar> out(out_shape);
  for (Index n = 0; n < out_shape.n; ++n) {
    for (Index o = 0; o < out_shape.c; ++o) {
      out.plane(n, o) = out_mat.row(o).segment(n * ohw, ohw).transpose().array() + bias[o];
    }
  }
  return out;
}

template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                    Conv2dOptions options, const Tensor<Scalar>& grad_output) {
  const Shape out_shape = conv_output_shape(input.shape(), weight.shape(), options);
  require_same_shape(grad_output.shape(), out_shape, "conv2d_backward");
  const Shape& ks = weight.shape();
  const Index K = ks.c * ks.h * ks.w;
  const Index ohw = out_shape.plane();
  MatrixRM<Scalar> g(out_shape.c, out_shape.n * ohw);
  for (Index n = 0; n < out_shape.n; ++n) {
    for (Index o = 0; o < out_shape.c; ++o) {
      g.row(o).segment(n * ohw, ohw) = grad_output.plane(n, o).matrix().transpose();
    }
  }
  const MatrixRM<Scalar> cols = im2col(input, ks.h, ks.w, options, out_shape.h, out_shape.w);
  Eigen::Map<const MatrixRM<Scalar>> w(weight.data(), ks.n, K);

  Conv2dGrads<Scalar> grads;
  grads.weight = Tensor<Scalar>(ks);
  Eigen::Map<MatrixRM<Scalar>>(grads.weight.data(), ks.n, K).noalias() = g * cols.transpose();
  grads.bias = g.rowwise().sum();
  const MatrixRM<Scalar> gcols = w.transpose() * g;
  grads.input = Tensor<Scalar>(input.shape());
  col2im(gcols, grads.input, ks.h, ks.w, options, out_shape.h, out_shape.w);
  return grads;
}

template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels) {
  const Shape& s = input.shape();
  const Shape& k = kernels.shape();
  require_odd_kernel(k);
  if (k.n != s.c) {
    throw std::invalid_argument("depthwise conv: " + std::to_string(k.n) + " kernels for " + std::to_string(s.c) +
                                " channels");
  }
  const Index py = k.h / 2, px = k.w / 2;
  Tensor<Scalar> out(s);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      for (Index i = 0; i < k.h; ++i) {
        for (Index j = 0; j < k.w; ++j) {
          const Scalar kv = kernels(c, 0, i, j);
          const Index dy = i - py, dx = j - px;
          for (Index y = std::max<Index>(0, -dy); y < std::min(s.h, s.h - dy); ++y) {
            Scalar* dst = out.data() + out.offset(n, c, y, 0);
            const Scalar* src = input.data() + input.offset(n, c, y + dy, 0);
            for (Index x = std::max<Index>(0, -dx); x < std::min(s.w, s.w - dx); ++x) dst[x] += kv * src[x + dx];
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
DepthwiseGrads<Scalar> depthwise_conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                                                 const Tensor<Scalar>& grad_output) {
  const Shape& s = input.shape();
  const Shape& k = kernels.shape();
  require_odd_kernel(k);
  require_same_shape(grad_output.shape(), s, "depthwise_conv2d_backward");
  const Index py = k.h / 2, px = k.w / 2;
  DepthwiseGrads<Scalar> grads{Tensor<Scalar>(s), Tensor<Scalar>(k)};
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      for (Index i = 0; i < k.h; ++i) {
        for (Index j = 0; j < k.w; ++j) {
          const Scalar kv = kernels(c, 0, i, j);
          const Index dy = i - py, dx = j - px;
          Scalar acc = 0;
          for (Index y = std::max<Index>(0, -dy); y < std::min(s.h, s.h - dy); ++y) {
            const Scalar* g = grad_output.data() + grad_output.offset(n, c, y, 0);
            const Scalar* src = input.data() + input.offset(n, c, y + dy, 0);
            Scalar* gin = grads.input.data() + grads.input.offset(n, c, y + dy, 0);
            for (Index x = std::max<Index>(0, -dx); x < std::min(s.w, s.w - dx); ++x) {
              acc += g[x] * src[x + dx];
              gin[x + dx] += kv * g[x];
            }
          }
          grads.kernels(c, 0, i, j) += acc;
        }
      }
    }
  }
  return grads;
}

template <typename Scalar>
InstanceNormResult<Scalar> instance_norm_forward(const Tensor<Scalar>& x) {
  const Shape& s = x.shape();
  if (x.empty()) throw std::invalid_argument("empty tensor");
  InstanceNormResult<Scalar> r{Tensor<Scalar>(s), {}};
  r.context.inv_std.resize(s.n * s.c);
  const Scalar eps = static_cast<Scalar>(kNormEpsilon);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      auto p = x.plane(n, c);
      const Scalar mean = p.mean();
      const Scalar var = (p - mean).square().mean();
      const Scalar inv = Scalar(1) / std::sqrt(var + eps);
      r.output.plane(n, c) = (p - mean) * inv;
      r.context.inv_std[n * s.c + c] = inv;
    }
  }
  r.context.normalized = r.output;
  return r;
}

template <typename Scalar>
Tensor<Scalar> instance_norm_backward(const InstanceNormContext<Scalar>& ctx, const Tensor<Scalar>& grad_output) {
  const Shape& s = ctx.normalized.shape();
  require_same_shape(grad_output.shape(), s, "instance_norm_backward");
  Tensor<Scalar> dx(s);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      auto g = grad_output.plane(n, c);
      auto xhat = ctx.normalized.plane(n, c);
      const Scalar mean_g = g.mean();
      const Scalar mean_gx = (g * xhat).mean();
      dx.plane(n, c) = ctx.inv_std[n * s.c + c] * (g - mean_g - xhat * mean_gx);
    }
  }
  return dx;
}

template <typename Scalar>
AdainResult<Scalar> adain_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& mu, const Tensor<Scalar>& sigma) {
  require_style_params(x.shape(), mu.shape(), "adain mu");
  require_style_params(x.shape(), sigma.shape(), "adain sigma");
  auto norm = instance_norm_forward(x);
  const Shape& s = x.shape();
  Tensor<Scalar> out(s);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      out.plane(n, c) = sigma[n * s.c + c] * norm.output.plane(n, c) + mu[n * s.c + c];
    }
  }
  return {std::move(out), {std::move(norm.context), sigma}};
}

template <typename Scalar>
AdainGrads<Scalar> adain_backward(const AdainContext<Scalar>& ctx, const Tensor<Scalar>& grad_output) {
  const Shape& s = ctx.norm.normalized.shape();
  require_same_shape(grad_output.shape(), s, "adain_backward");
  const Shape ps{s.n, s.c, 1, 1};
  AdainGrads<Scalar> grads{Tensor<Scalar>(), Tensor<Scalar>(ps), Tensor<Scalar>(ps)};
  Tensor<Scalar> g_norm(s);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const Index k = n * s.c + c;
      auto g = grad_output.plane(n, c);
      grads.mu[k] = g.sum();
      grads.sigma[k] = (g * ctx.norm.normalized.plane(n, c)).sum();
      g_norm.plane(n, c) = g * ctx.sigma[k];
    }
  }
  grads.input = instance_norm_backward(ctx.norm, g_norm);
  return grads;
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Eigen::Ref<const MatrixRM<std::type_identity_t<Scalar>>>& weight,
                      const Eigen::Ref<const Vector<std::type_identity_t<Scalar>>>& bias) {
  const Shape& s = x.shape();
  const Index in = s.c * s.plane();
  if (in != weight.cols()) {
    throw std::invalid_argument("linear: input dimension " + std::to_string(in) + " vs weight columns " +
                                std::to_string(weight.cols()));
  }
  if (bias.size() != weight.rows()) throw std::invalid_argument("linear: bias length mismatch");
  Eigen::Map<const MatrixRM<Scalar>> xm(x.data(), s.n, in);
  Tensor<Scalar> out({s.n, weight.rows(), 1, 1});
  Eigen::Map<MatrixRM<Scalar>> om(out.data(), s.n, weight.rows());
  om.noalias() = xm * weight.transpose();
  om.rowwise() += bias.transpose();
  return out;
}

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const Tensor<Scalar>& x, const Eigen::Ref<const MatrixRM<std::type_identity_t<Scalar>>>& weight,
                                    const Tensor<Scalar>& grad_output) {
  const Shape& s = x.shape();
  const Index in = s.c * s.plane();
  require_same_shape(grad_output.shape(), {s.n, weight.rows(), 1, 1}, "linear_backward");
  Eigen::Map<const MatrixRM<Scalar>> xm(x.data(), s.n, in);
  Eigen::Map<const MatrixRM<Scalar>> gm(grad_output.data(), s.n, weight.rows());
  LinearGrads<Scalar> grads;
  grads.input = Tensor<Scalar>(s);
  Eigen::Map<MatrixRM<Scalar>>(grads.input.data(), s.n, in).noalias() = gm * weight;
  grads.weight = gm.transpose() * xm;
  grads.bias = gm.colwise().sum().transpose();
  return grads;
}

template <typename Scalar>
void AffineMap<Scalar>::validate() const {
  if (bias.size() != weight.rows()) throw std::invalid_argument("affine map: bias length mismatch");
  if (target == AffineTarget::mean_and_sigma && weight.rows() % 2 != 0) {
    throw std::invalid_argument("affine map: mean_and_sigma needs an even output count");
  }
}

template <typename Scalar>
Tensor<Scalar> affine_style(const AffineMap<Scalar>& map, const Tensor<Scalar>& w) {
  map.validate();
  if (w.shape().c * w.shape().plane() != map.style_dim()) {
    throw std::invalid_argument("affine_style: style code dimension " + std::to_string(w.shape().c) +
                                " vs map dimension " + std::to_string(map.style_dim()));
  }
  return linear(w, map.weight, map.bias);
}

template <typename Scalar>
LinearGrads<Scalar> affine_style_backward(const AffineMap<Scalar>& map, const Tensor<Scalar>& w,
                                          const Tensor<Scalar>& grad_output) {
  return linear_backward(w, map.weight, grad_output);
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_mean_sigma(const Tensor<Scalar>& params) {
  const Shape& s = params.shape();
  if (s.c % 2 != 0 || s.plane() != 1) throw std::invalid_argument("split_mean_sigma: expected (N, 2C, 1, 1)");
  const Index C = s.c / 2;
  Tensor<Scalar> mu({s.n, C, 1, 1}), sigma({s.n, C, 1, 1});
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < C; ++c) {
      mu[n * C + c] = params[n * s.c + c];
      sigma[n * C + c] = params[n * s.c + C + c];
    }
  }
  return {std::move(mu), std::move(sigma)};
}

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::prelu: return "prelu";
    case ActivationKind::adarelu: return "adarelu";
    case ActivationKind::sa_relu: return "sa_relu";
    case ActivationKind::sa_leaky_relu: return "sa_leaky_relu";
    case ActivationKind::sa_prelu: return "sa_prelu";
    case ActivationKind::sa_adarelu: return "sa_adarelu";
  }
  return "unknown";
}

std::string to_string(StructuralMode mode) { return mode == StructuralMode::struconv ? "struconv" : "dwconv"; }

ActivationKind parse_activation_kind(const std::string& name) {
  for (auto k : {ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::prelu, ActivationKind::adarelu,
                 ActivationKind::sa_relu, ActivationKind::sa_leaky_relu, ActivationKind::sa_prelu,
                 ActivationKind::sa_adarelu}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown activation kind '" + name + "'");
}

StructuralMode parse_structural_mode(const std::string& name) {
  if (name == "struconv") return StructuralMode::struconv;
  if (name == "dwconv") return StructuralMode::dwconv;
  throw std::invalid_argument("unknown structural mode '" + name + "'");
}

bool is_structural(ActivationKind kind) {
  return kind == ActivationKind::sa_relu || kind == ActivationKind::sa_leaky_relu ||
         kind == ActivationKind::sa_prelu || kind == ActivationKind::sa_adarelu;
}

ActivationKind rectifier_of(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::sa_relu: return ActivationKind::relu;
    case ActivationKind::sa_leaky_relu: return ActivationKind::leaky_relu;
    case ActivationKind::sa_prelu: return ActivationKind::prelu;
    case ActivationKind::sa_adarelu: return ActivationKind::adarelu;
    default: return kind;
  }
}

bool is_style_adaptive(ActivationKind kind) { return rectifier_of(kind) == ActivationKind::adarelu; }

template <typename Scalar>
Tensor<Scalar> rectify(const Tensor<Scalar>& x, const Tensor<Scalar>& slopes) {
  const Shape& s = x.shape();
  require_style_params(s, slopes.shape(), "rectify slopes");
  Tensor<Scalar> out(s);
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const Scalar a = slopes[n * s.c + c];
      auto p = x.plane(n, c);
      out.plane(n, c) = (p >= Scalar(0)).select(p, a * p);
    }
  }
  return out;
}

template <typename Scalar>
RectifyGrads<Scalar> rectify_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& slopes,
                                      const Tensor<Scalar>& grad_output) {
  const Shape& s = x.shape();
  require_style_params(s, slopes.shape(), "rectify slopes");
  require_same_shape(grad_output.shape(), s, "rectify_backward");
  RectifyGrads<Scalar> grads{Tensor<Scalar>(s), Tensor<Scalar>(slopes.shape())};
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      const Scalar a = slopes[n * s.c + c];
      auto p = x.plane(n, c);
      auto g = grad_output.plane(n, c);
      const auto negative = p < Scalar(0);
      grads.input.plane(n, c) = negative.select(a * g, g);
      grads.slopes[n * s.c + c] = negative.select(g * p, Scalar(0)).sum();
    }
  }
  return grads;
}

template <typename Scalar>
StruConvKernelBank<Scalar> StruConvKernelBank<Scalar>::identity(Index channels, Index kernel) {
  StruConvKernelBank bank{Tensor<Scalar>({channels, 1, kernel, kernel})};
  for (Index c = 0; c < channels; ++c) bank.raw(c, 0, kernel / 2, kernel / 2) = Scalar(1);
  return bank;
}

template <typename Scalar>
StruConvKernelBank<Scalar> normalize_kernels(const StruConvKernelBank<Scalar>& bank) {
  const Shape& s = bank.raw.shape();
  StruConvKernelBank<Scalar> out{Tensor<Scalar>(s)};
  for (Index c = 0; c < s.n; ++c) {
    auto k = bank.raw.plane(c, 0);
    // Dividing by the largest magnitude first makes the result depend only on the ratios
    // k_i / k_max, which are bit-identical for k and c * k whenever c * k is exact.
    const Scalar peak = k.abs().maxCoeff();
    if (!(peak > Scalar(0))) throw std::invalid_argument("degenerate kernel");
    const auto unit = (k / peak).eval();
    const Scalar norm = unit.matrix().norm();
    if (!(peak * norm > static_cast<Scalar>(kDegenerateKernelNorm))) {
      throw std::invalid_argument("degenerate kernel");
    }
    out.raw.plane(c, 0) = unit / norm;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> normalize_kernels_backward(const StruConvKernelBank<Scalar>& bank,
                                          const Tensor<Scalar>& grad_normalized) {
  const Shape& s = bank.raw.shape();
  require_same_shape(grad_normalized.shape(), s, "normalize_kernels_backward");
  Tensor<Scalar> g(s);
  for (Index c = 0; c < s.n; ++c) {
    auto k = bank.raw.plane(c, 0);
    const Scalar norm = k.matrix().norm();
    if (!(norm > static_cast<Scalar>(kDegenerateKernelNorm))) throw std::invalid_argument("degenerate kernel");
    const auto unit = k / norm;
    auto gk = grad_normalized.plane(c, 0);
    g.plane(c, 0) = (gk - unit * (unit * gk).sum()) / norm;
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> struconv(const Tensor<Scalar>& x, const StruConvKernelBank<Scalar>& bank, StructuralMode mode) {
  if (bank.channels() != x.shape().c) {
    throw std::invalid_argument("struconv: kernel bank has " + std::to_string(bank.channels()) +
                                " channels, input has " + std::to_string(x.shape().c));
  }
  if (mode == StructuralMode::dwconv) return depthwise_conv2d(x, bank.raw);
  return depthwise_conv2d(x, normalize_kernels(bank).raw);
}

template <typename Scalar>
StruConvGrads<Scalar> struconv_backward(const Tensor<Scalar>& x, const StruConvKernelBank<Scalar>& bank,
                                        StructuralMode mode, const Tensor<Scalar>& grad_output) {
  if (bank.channels() != x.shape().c) throw std::invalid_argument("struconv_backward: channel mismatch");
  if (mode == StructuralMode::dwconv) {
    auto g = depthwise_conv2d_backward(x, bank.raw, grad_output);
    return {std::move(g.input), std::move(g.kernels)};
  }
  auto g = depthwise_conv2d_backward(x, normalize_kernels(bank).raw, grad_output);
  return {std::move(g.input), normalize_kernels_backward(bank, g.kernels)};
}

template <typename Scalar>
void ActivationConfig<Scalar>::validate(Index channels) const {
  const ActivationKind rect = rectifier_of(kind);
  const bool wants_learned = rect == ActivationKind::prelu;
  const bool wants_affine = rect == ActivationKind::adarelu;
  const bool wants_structural = is_structural(kind);
  if (learned_slopes.has_value() != wants_learned) {
    throw std::invalid_argument("activation " + to_string(kind) +
                                (wants_learned ? ": missing learned slopes" : ": unexpected learned slopes"));
  }
  if (slope_affine.has_value() != wants_affine) {
    throw std::invalid_argument("activation " + to_string(kind) +
                                (wants_affine ? ": missing slope affine map" : ": unexpected slope affine map"));
  }
  if (structural.has_value() != wants_structural) {
    throw std::invalid_argument("activation " + to_string(kind) +
                                (wants_structural ? ": missing structural kernels" : ": unexpected structural kernels"));
  }
  if (learned_slopes && learned_slopes->size() != channels) {
    throw std::invalid_argument("activation: learned slope count mismatch");
  }
  if (slope_affine) {
    slope_affine->validate();
    if (slope_affine->target != AffineTarget::slopes || slope_affine->weight.rows() != channels) {
      throw std::invalid_argument("activation: slope affine map must produce one slope per channel");
    }
  }
  if (structural && structural->channels() != channels) {
    throw std::invalid_argument("activation: structural kernel count mismatch");
  }
}

template <typename Scalar>
Tensor<Scalar> resolve_slopes(const ActivationConfig<Scalar>& cfg, const Tensor<Scalar>* w, Index batch,
                              Index channels) {
  const Shape s{batch, channels, 1, 1};
  switch (rectifier_of(cfg.kind)) {
    case ActivationKind::relu: return Tensor<Scalar>(s);
    case ActivationKind::leaky_relu: return Tensor<Scalar>::constant(s, cfg.fixed_slope);
    case ActivationKind::prelu: {
      if (!cfg.learned_slopes || cfg.learned_slopes->size() != channels) {
        throw std::invalid_argument("slope vector length mismatch");
      }
      Tensor<Scalar> out(s);
      for (Index n = 0; n < batch; ++n) out.array().segment(n * channels, channels) = cfg.learned_slopes->array();
      return out;
    }
    default: {
      if (!cfg.slope_affine) throw std::invalid_argument("adarelu: missing slope affine map");
      if (w == nullptr) throw std::invalid_argument("adarelu: style code required");
      if (w->shape().n != batch) throw std::invalid_argument("adarelu: style batch mismatch");
      Tensor<Scalar> slopes = affine_style(*cfg.slope_affine, *w);
      if (slopes.shape().c != channels) throw std::invalid_argument("slope vector length mismatch");
      return slopes;
    }
  }
}

template <typename Scalar>
Tensor<Scalar> rectify(const Tensor<Scalar>& x, const ActivationConfig<Scalar>& cfg, const Tensor<Scalar>& slopes) {
  (void)cfg;
  if (slopes.shape().c != x.shape().c) throw std::invalid_argument("slope vector length mismatch");
  return rectify(x, slopes);
}

template <typename Scalar>
Tensor<Scalar> sa_activate(const Tensor<Scalar>& x, const ActivationConfig<Scalar>& cfg, const Tensor<Scalar>* w) {
  if (!is_structural(cfg.kind) || !cfg.structural) {
    throw std::invalid_argument("sa_activate: activation " + to_string(cfg.kind) + " has no structural function");
  }
  const Tensor<Scalar> shaped = struconv(x, *cfg.structural, cfg.structural_mode);
  return rectify(shaped, resolve_slopes(cfg, w, x.shape().n, x.shape().c));
}

template <typename Scalar>
Tensor<Scalar> activate(const Tensor<Scalar>& x, const ActivationConfig<Scalar>& cfg, const Tensor<Scalar>* w) {
  if (is_structural(cfg.kind)) return sa_activate(x, cfg, w);
  return rectify(x, resolve_slopes(cfg, w, x.shape().n, x.shape().c));
}

template <typename Scalar>
Tensor<Scalar> avg_pool2(const Tensor<Scalar>& x) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw std::invalid_argument("avg_pool2: odd spatial extent " + s.str());
  Tensor<Scalar> out({s.n, s.c, s.h / 2, s.w / 2});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index y = 0; y < s.h / 2; ++y)
        for (Index xx = 0; xx < s.w / 2; ++xx)
          out(n, c, y, xx) = Scalar(0.25) * (x(n, c, 2 * y, 2 * xx) + x(n, c, 2 * y, 2 * xx + 1) +
                                             x(n, c, 2 * y + 1, 2 * xx) + x(n, c, 2 * y + 1, 2 * xx + 1));
  return out;
}

template <typename Scalar>
Tensor<Scalar> avg_pool2_backward(const Shape& input_shape, const Tensor<Scalar>& grad_output) {
  Tensor<Scalar> g(input_shape);
  for (Index n = 0; n < input_shape.n; ++n)
    for (Index c = 0; c < input_shape.c; ++c)
      for (Index y = 0; y < input_shape.h; ++y)
        for (Index x = 0; x < input_shape.w; ++x) g(n, c, y, x) = Scalar(0.25) * grad_output(n, c, y / 2, x / 2);
  return g;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest2(const Tensor<Scalar>& x) {
  const Shape& s = x.shape();
  Tensor<Scalar> out({s.n, s.c, 2 * s.h, 2 * s.w});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index y = 0; y < 2 * s.h; ++y)
        for (Index xx = 0; xx < 2 * s.w; ++xx) out(n, c, y, xx) = x(n, c, y / 2, xx / 2);
  return out;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest2_backward(const Shape& input_shape, const Tensor<Scalar>& grad_output) {
  Tensor<Scalar> g(input_shape);
  const Shape& s = grad_output.shape();
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index y = 0; y < s.h; ++y)
        for (Index x = 0; x < s.w; ++x) g(n, c, y / 2, x / 2) += grad_output(n, c, y, x);
  return g;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  const Shape& s = x.shape();
  Tensor<Scalar> out({s.n, s.c, 1, 1});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) out[n * s.c + c] = x.plane(n, c).mean();
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Shape& input_shape, const Tensor<Scalar>& grad_output) {
  Tensor<Scalar> g(input_shape);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(input_shape.plane());
  for (Index n = 0; n < input_shape.n; ++n)
    for (Index c = 0; c < input_shape.c; ++c) g.plane(n, c).setConstant(grad_output[n * input_shape.c + c] * inv);
  return g;
}

#define ADARELU_INSTANTIATE(S)                                                                                      \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Eigen::Ref<const Vector<S>>&, Conv2dOptions); \
  template Conv2dGrads<S> conv2d_backward(const Tensor<S>&, const Tensor<S>&, Conv2dOptions, const Tensor<S>&);     \
  template Tensor<S> depthwise_conv2d(const Tensor<S>&, const Tensor<S>&);                                          \
  template DepthwiseGrads<S> depthwise_conv2d_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);       \
  template InstanceNormResult<S> instance_norm_forward(const Tensor<S>&);                                           \
  template Tensor<S> instance_norm_backward(const InstanceNormContext<S>&, const Tensor<S>&);                       \
  template AdainResult<S> adain_forward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                      \
  template AdainGrads<S> adain_backward(const AdainContext<S>&, const Tensor<S>&);                                  \
  template Tensor<S> linear(const Tensor<S>&, const Eigen::Ref<const MatrixRM<S>>&,                                 \
                            const Eigen::Ref<const Vector<S>>&);                                                    \
  template LinearGrads<S> linear_backward(const Tensor<S>&, const Eigen::Ref<const MatrixRM<S>>&, const Tensor<S>&); \
  template struct AffineMap<S>;                                                                                     \
  template Tensor<S> affine_style(const AffineMap<S>&, const Tensor<S>&);                                           \
  template LinearGrads<S> affine_style_backward(const AffineMap<S>&, const Tensor<S>&, const Tensor<S>&);           \
  template std::pair<Tensor<S>, Tensor<S>> split_mean_sigma(const Tensor<S>&);                                      \
  template Tensor<S> rectify(const Tensor<S>&, const Tensor<S>&);                                                   \
  template RectifyGrads<S> rectify_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                  \
  template struct StruConvKernelBank<S>;                                                                            \
  template StruConvKernelBank<S> normalize_kernels(const StruConvKernelBank<S>&);                                   \
  template Tensor<S> normalize_kernels_backward(const StruConvKernelBank<S>&, const Tensor<S>&);                    \
  template Tensor<S> struconv(const Tensor<S>&, const StruConvKernelBank<S>&, StructuralMode);                      \
  template StruConvGrads<S> struconv_backward(const Tensor<S>&, const StruConvKernelBank<S>&, StructuralMode,       \
                                              const Tensor<S>&);                                                    \
  template struct ActivationConfig<S>;                                                                              \
  template Tensor<S> resolve_slopes(const ActivationConfig<S>&, const Tensor<S>*, Index, Index);                    \
  template Tensor<S> rectify(const Tensor<S>&, const ActivationConfig<S>&, const Tensor<S>&);                       \
  template Tensor<S> sa_activate(const Tensor<S>&, const ActivationConfig<S>&, const Tensor<S>*);                   \
  template Tensor<S> activate(const Tensor<S>&, const ActivationConfig<S>&, const Tensor<S>*);                      \
  template Tensor<S> avg_pool2(const Tensor<S>&);                                                                   \
  template Tensor<S> avg_pool2_backward(const Shape&, const Tensor<S>&);                                            \
  template Tensor<S> upsample_nearest2(const Tensor<S>&);                                                           \
  template Tensor<S> upsample_nearest2_backward(const Shape&, const Tensor<S>&);                                    \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                                             \
  template Tensor<S> global_avg_pool_backward(const Shape&, const Tensor<S>&);

ADARELU_INSTANTIATE(float)
ADARELU_INSTANTIATE(double)

}  // namespace adarelu
