#pragma once

#include "adarelu/tensor.hpp"

#include <optional>
#include <string>
#include <type_traits>

namespace adarelu {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

/// Output extent of a convolution along one axis; throws when it would be < 1.
Index conv_output_extent(Index input, Index kernel, int stride, int padding);

/// Cross-correlation of `input` (N, I, H, W) with `weight` (O, I, KH, KW) plus per-output bias.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Eigen::Ref<const Vector<std::type_identity_t<Scalar>>>& bias, Conv2dOptions options = {});

template <typename Scalar>
struct Conv2dGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
  Vector<Scalar> bias;
};

/// The forward context of conv2d is its input and weight; nothing else is cached.
template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                    Conv2dOptions options, const Tensor<Scalar>& grad_output);

/// Depthwise cross-correlation, stride 1, shape-preserving zero padding.
/// `kernels` is (C, 1, KH, KW) with odd KH and KW.
template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels);

template <typename Scalar>
struct DepthwiseGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> kernels;
};

template <typename Scalar>
DepthwiseGrads<Scalar> depthwise_conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                                                 const Tensor<Scalar>& grad_output);

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

inline constexpr double kNormEpsilon = 1e-5;

template <typename Scalar>
struct InstanceNormContext {
  Tensor<Scalar> normalized;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std;  // one per (sample, channel)
};

template <typename Scalar>
struct InstanceNormResult {
  Tensor<Scalar> output;
  InstanceNormContext<Scalar> context;
};

/// (x - mean) / sqrt(var + eps) for every (sample, channel) plane.
template <typename Scalar>
InstanceNormResult<Scalar> instance_norm_forward(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& x) {
  return instance_norm_forward(x).output;
}

template <typename Scalar>
Tensor<Scalar> instance_norm_backward(const InstanceNormContext<Scalar>& ctx, const Tensor<Scalar>& grad_output);

template <typename Scalar>
struct AdainContext {
  InstanceNormContext<Scalar> norm;
  Tensor<Scalar> sigma;
};

template <typename Scalar>
struct AdainResult {
  Tensor<Scalar> output;
  AdainContext<Scalar> context;
};

template <typename Scalar>
struct AdainGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> mu;
  Tensor<Scalar> sigma;
};

/// sigma * instance_norm(x) + mu with per-sample targets shaped (N, C, 1, 1).
template <typename Scalar>
AdainResult<Scalar> adain_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& mu, const Tensor<Scalar>& sigma);

template <typename Scalar>
Tensor<Scalar> adain(const Tensor<Scalar>& x, const Tensor<Scalar>& mu, const Tensor<Scalar>& sigma) {
  return adain_forward(x, mu, sigma).output;
}

template <typename Scalar>
AdainGrads<Scalar> adain_backward(const AdainContext<Scalar>& ctx, const Tensor<Scalar>& grad_output);

// ---------------------------------------------------------------------------
// Affine maps
// ---------------------------------------------------------------------------

/// Fully connected map on (N, I, 1, 1) tensors; weight is (O, I) row-major.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Eigen::Ref<const MatrixRM<std::type_identity_t<Scalar>>>& weight,
                      const Eigen::Ref<const Vector<std::type_identity_t<Scalar>>>& bias);

template <typename Scalar>
struct LinearGrads {
  Tensor<Scalar> input;
  MatrixRM<Scalar> weight;
  Vector<Scalar> bias;
};

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const Tensor<Scalar>& x, const Eigen::Ref<const MatrixRM<std::type_identity_t<Scalar>>>& weight,
                                    const Tensor<Scalar>& grad_output);

enum class AffineTarget { slopes, mean_and_sigma };

/// Style code -> per-channel modulation parameters.
template <typename Scalar>
struct AffineMap {
  MatrixRM<Scalar> weight;  // out_params x dim(w)
  Vector<Scalar> bias;      // out_params
  AffineTarget target = AffineTarget::slopes;

  Index style_dim() const { return weight.cols(); }
  Index channels() const { return target == AffineTarget::slopes ? weight.rows() : weight.rows() / 2; }
  void validate() const;
};

/// weight * w + bias per sample. For mean_and_sigma the first C outputs are mu and
/// the next C are sigma. Sigma is not clamped.
template <typename Scalar>
Tensor<Scalar> affine_style(const AffineMap<Scalar>& map, const Tensor<Scalar>& w);

template <typename Scalar>
LinearGrads<Scalar> affine_style_backward(const AffineMap<Scalar>& map, const Tensor<Scalar>& w,
                                          const Tensor<Scalar>& grad_output);

/// Split an (N, 2C, 1, 1) mean_and_sigma output into its two halves.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_mean_sigma(const Tensor<Scalar>& params);

// ---------------------------------------------------------------------------
// Rectifiers and structural convolution
// ---------------------------------------------------------------------------

enum class ActivationKind { relu, leaky_relu, prelu, adarelu, sa_relu, sa_leaky_relu, sa_prelu, sa_adarelu };
enum class StructuralMode { struconv, dwconv };

std::string to_string(ActivationKind kind);
std::string to_string(StructuralMode mode);
ActivationKind parse_activation_kind(const std::string& name);
StructuralMode parse_structural_mode(const std::string& name);

bool is_structural(ActivationKind kind);
/// Drops the structural prefix: sa_adarelu -> adarelu.
ActivationKind rectifier_of(ActivationKind kind);
bool is_style_adaptive(ActivationKind kind);

/// x where x >= 0, slope[n, c] * x elsewhere. `slopes` is (N, C, 1, 1).
template <typename Scalar>
Tensor<Scalar> rectify(const Tensor<Scalar>& x, const Tensor<Scalar>& slopes);

template <typename Scalar>
struct RectifyGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> slopes;
};

/// Derivative at exactly zero takes the positive branch.
template <typename Scalar>
RectifyGrads<Scalar> rectify_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& slopes,
                                      const Tensor<Scalar>& grad_output);

/// One kernel per channel, raw (unnormalized) storage.
template <typename Scalar>
struct StruConvKernelBank {
  Tensor<Scalar> raw;  // (C, 1, KH, KW)

  Index channels() const { return raw.shape().n; }
  StruConvKernelBank scaled(Scalar factor) const { return {Tensor<Scalar>(raw.shape(), raw.array() * factor)}; }

  /// Identity direction (centre 1) for every channel.
  static StruConvKernelBank identity(Index channels, Index kernel = 3);
};

inline constexpr double kDegenerateKernelNorm = 1e-12;

/// k / ||k||_2 per channel; throws "degenerate kernel" for norms <= 1e-12.
template <typename Scalar>
StruConvKernelBank<Scalar> normalize_kernels(const StruConvKernelBank<Scalar>& bank);

/// Gradient w.r.t. raw kernels given the gradient w.r.t. the normalized kernels.
template <typename Scalar>
Tensor<Scalar> normalize_kernels_backward(const StruConvKernelBank<Scalar>& bank,
                                          const Tensor<Scalar>& grad_normalized);

template <typename Scalar>
Tensor<Scalar> struconv(const Tensor<Scalar>& x, const StruConvKernelBank<Scalar>& bank,
                        StructuralMode mode = StructuralMode::struconv);

template <typename Scalar>
struct StruConvGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> raw_kernels;
};

template <typename Scalar>
StruConvGrads<Scalar> struconv_backward(const Tensor<Scalar>& x, const StruConvKernelBank<Scalar>& bank,
                                        StructuralMode mode, const Tensor<Scalar>& grad_output);

/// Everything one activation site needs. Exactly the fields demanded by `kind`
/// are populated; validate() enforces it.
template <typename Scalar>
struct ActivationConfig {
  ActivationKind kind = ActivationKind::leaky_relu;
  Scalar fixed_slope = Scalar(0.2);
  std::optional<Vector<Scalar>> learned_slopes;
  std::optional<AffineMap<Scalar>> slope_affine;
  std::optional<StruConvKernelBank<Scalar>> structural;
  StructuralMode structural_mode = StructuralMode::struconv;

  void validate(Index channels) const;
};

/// Per-sample, per-channel slopes for `cfg`: zeros (relu), fixed (leaky), learned (prelu)
/// or A(w) (adarelu). `w` is only read by adaptive kinds; `batch` sizes the result.
template <typename Scalar>
Tensor<Scalar> resolve_slopes(const ActivationConfig<Scalar>& cfg, const Tensor<Scalar>* w, Index batch,
                              Index channels);

template <typename Scalar>
Tensor<Scalar> rectify(const Tensor<Scalar>& x, const ActivationConfig<Scalar>& cfg, const Tensor<Scalar>& slopes);

/// rectify(struconv(x)) with slopes resolved from cfg and w.
template <typename Scalar>
Tensor<Scalar> sa_activate(const Tensor<Scalar>& x, const ActivationConfig<Scalar>& cfg, const Tensor<Scalar>* w);

/// Applies the activation of any kind: structural kinds route through sa_activate.
template <typename Scalar>
Tensor<Scalar> activate(const Tensor<Scalar>& x, const ActivationConfig<Scalar>& cfg, const Tensor<Scalar>* w);

// ---------------------------------------------------------------------------
// Resampling and pointwise helpers used by the networks
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> avg_pool2(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> avg_pool2_backward(const Shape& input_shape, const Tensor<Scalar>& grad_output);

template <typename Scalar>
Tensor<Scalar> upsample_nearest2(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> upsample_nearest2_backward(const Shape& input_shape, const Tensor<Scalar>& grad_output);

/// (N, C, H, W) -> (N, C, 1, 1) spatial mean.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Shape& input_shape, const Tensor<Scalar>& grad_output);

}  // namespace adarelu
