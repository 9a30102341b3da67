#include "adarelu/layers.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace adarelu;

namespace {

Tensor<double> row(std::initializer_list<double> v) { return Tensor<double>({1, 1, 1, static_cast<Index>(v.size())}, v); }

Tensor<double> per_channel(Index n, Index c, double value) { return Tensor<double>::constant({n, c, 1, 1}, value); }

bool bitwise_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && (a.array() == b.array()).all();
}

template <typename Scalar>
Tensor<Scalar> leaky_reference(const Tensor<Scalar>& x, Scalar a) {
  return map_elements(x, [a](Scalar v) { return v >= 0 ? v : a * v; });
}

ActivationConfig<double> adarelu_config(Index channels, Index dim, double bias) {
  ActivationConfig<double> cfg;
  cfg.kind = ActivationKind::adarelu;
  AffineMap<double> map;
  map.weight = MatrixRM<double>::Zero(channels, dim);
  map.bias = Vector<double>::Constant(channels, bias);
  cfg.slope_affine = map;
  return cfg;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> k({1, 1, 3, 3});
  k(0, 0, 1, 1) = 1;
  const auto out = conv2d(x, k, Vector<double>::Zero(1), {1, 1});
  EXPECT_TRUE(bitwise_equal(out, x));
}

TEST(Conv2d, AllOnesKernelSumsPaddedWindows) {
  const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto out = conv2d(x, Tensor<double>::constant({1, 1, 3, 3}, 1.0), Vector<double>::Zero(1), {1, 1});
  EXPECT_TRUE((out.array() == 10.0).all());
}

TEST(Conv2d, ZeroInputGivesBias) {
  Vector<double> bias(2);
  bias << 0.5, -1.5;
  std::mt19937_64 rng(1);
  const auto out = conv2d(Tensor<double>({2, 3, 4, 4}), randn<double>({2, 3, 3, 3}, rng), bias, {1, 1});
  for (Index n = 0; n < 2; ++n) {
    EXPECT_TRUE((out.plane(n, 0) == 0.5).all());
    EXPECT_TRUE((out.plane(n, 1) == -1.5).all());
  }
}

TEST(Conv2d, OutputExtentAndErrors) {
  const auto out = conv2d(Tensor<double>({1, 2, 7, 5}), Tensor<double>({4, 2, 3, 3}), Vector<double>::Zero(4), {2, 1});
  EXPECT_EQ(out.shape(), (Shape{1, 4, 4, 3}));
  EXPECT_THROW(conv2d(Tensor<double>({1, 3, 4, 4}), Tensor<double>({1, 2, 3, 3}), Vector<double>::Zero(1)),
               std::invalid_argument);
  EXPECT_THROW(conv2d(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1, 1, 3, 3}), Vector<double>::Zero(1)),
               std::invalid_argument);
}

TEST(InstanceNorm, HandExample) {
  const auto out = instance_norm(row({1, 2, 3}));
  EXPECT_NEAR(out[0], -1.2247, 1e-3);
  EXPECT_NEAR(out[1], 0.0, 1e-12);
  EXPECT_NEAR(out[2], 1.2247, 1e-3);
}

TEST(InstanceNorm, ConstantAndStandardChannels) {
  const auto c = instance_norm(row({4, 4, 4, 4}));
  EXPECT_TRUE((c.array().abs() < 1e-12).all());
  const auto s = instance_norm(row({-1, 1}));
  EXPECT_NEAR(s[0], -1.0, 1e-4);
  EXPECT_NEAR(s[1], 1.0, 1e-4);
}

TEST(Adain, UnitTargetsReduceToInstanceNorm) {
  std::mt19937_64 rng(2);
  const auto x = randn<double>({2, 3, 4, 4}, rng);
  const auto out = adain(x, per_channel(2, 3, 0.0), per_channel(2, 3, 1.0));
  EXPECT_TRUE(bitwise_equal(out, instance_norm(x)));
}

TEST(Adain, HandExample) {
  const auto out = adain(row({1, 2, 3}), per_channel(1, 1, 2.0), per_channel(1, 1, 3.0));
  EXPECT_NEAR(out[0], -1.674, 5e-3);
  EXPECT_NEAR(out[1], 2.0, 1e-12);
  EXPECT_NEAR(out[2], 5.674, 5e-3);
}

TEST(Adain, ConstantChannelCollapsesToTargetMean) {
  const auto out = adain(row({7, 7, 7}), per_channel(1, 1, -0.3), per_channel(1, 1, 4.0));
  EXPECT_TRUE(((out.array() + 0.3).abs() < 1e-12).all());
}

TEST(Adain, OutputStatisticsMatchTargets) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = randn<double>({2, 4, 8, 8}, rng, 3.0, 1.0);
    const auto mu = randn<double>({2, 4, 1, 1}, rng);
    const auto sigma = rand_uniform<double>({2, 4, 1, 1}, rng, 0.5, 2.0);
    const auto s = instance_stats(adain(x, mu, sigma));
    for (Index k = 0; k < 8; ++k) {
      EXPECT_LE(std::abs(s.mean[k] - mu[k]), 1e-4 * std::max(1.0, std::abs(mu[k])));
      EXPECT_LE(std::abs(s.variance[k] - sigma[k] * sigma[k]), 1e-4 * sigma[k] * sigma[k]);
    }
  }
}

TEST(Adain, LengthMismatchThrows) {
  EXPECT_THROW(adain(Tensor<double>({1, 3, 2, 2}), per_channel(1, 2, 0.0), per_channel(1, 3, 1.0)),
               std::invalid_argument);
}

TEST(AffineStyle, Examples) {
  AffineMap<double> zero;
  zero.weight = MatrixRM<double>::Zero(2, 2);
  zero.bias = Vector<double>::Constant(2, 0.7);
  std::mt19937_64 rng(6);
  const auto out0 = affine_style(zero, randn<double>({1, 2, 1, 1}, rng));
  EXPECT_EQ(out0[0], 0.7);
  EXPECT_EQ(out0[1], 0.7);

  AffineMap<double> id;
  id.weight = MatrixRM<double>::Identity(2, 2);
  id.bias = Vector<double>::Zero(2);
  const auto out1 = affine_style(id, Tensor<double>({1, 2, 1, 1}, {0.3, -0.1}));
  EXPECT_EQ(out1[0], 0.3);
  EXPECT_EQ(out1[1], -0.1);

  AffineMap<double> two;
  two.weight = 2.0 * MatrixRM<double>::Identity(2, 2);
  two.bias = Vector<double>::Ones(2);
  const auto out2 = affine_style(two, Tensor<double>({1, 2, 1, 1}, {1, 2}));
  EXPECT_EQ(out2[0], 3.0);
  EXPECT_EQ(out2[1], 5.0);

  EXPECT_THROW(affine_style(two, Tensor<double>({1, 3, 1, 1})), std::invalid_argument);
}

TEST(AffineStyle, MeanAndSigmaSplitKeepsNegativeSigma) {
  AffineMap<double> m;
  m.target = AffineTarget::mean_and_sigma;
  m.weight = MatrixRM<double>::Zero(4, 1);
  m.bias.resize(4);
  m.bias << 1, 2, -3, 4;
  const auto [mu, sigma] = split_mean_sigma(affine_style(m, Tensor<double>({1, 1, 1, 1}, {5})));
  EXPECT_EQ(mu[0], 1);
  EXPECT_EQ(mu[1], 2);
  EXPECT_EQ(sigma[0], -3);
  EXPECT_EQ(sigma[1], 4);
}

TEST(Rectify, Examples) {
  const auto a = rectify(row({-1, 2, -3}), per_channel(1, 1, 0.2));
  EXPECT_DOUBLE_EQ(a[0], -0.2);
  EXPECT_DOUBLE_EQ(a[1], 2.0);
  EXPECT_DOUBLE_EQ(a[2], -0.6000000000000001);
  std::mt19937_64 rng(1);
  const auto x = randn<double>({2, 3, 4, 4}, rng);
  EXPECT_TRUE(bitwise_equal(rectify(x, per_channel(2, 3, 1.0)), x));
  const auto r = rectify(row({-2, 3}), per_channel(1, 1, -1.0));
  EXPECT_EQ(r[0], 2);
  EXPECT_EQ(r[1], 3);
  EXPECT_THROW(rectify(x, per_channel(2, 2, 0.2)), std::invalid_argument);
}

TEST(Rectify, EquivalenceChain) {
  std::mt19937_64 rng(8);
  const auto x = randn<double>({2, 3, 5, 5}, rng);
  const auto w = randn<double>({2, 4, 1, 1}, rng);
  const auto relu = map_elements(x, [](double v) { return v >= 0 ? v : 0.0 * v; });
  EXPECT_TRUE(bitwise_equal(rectify(x, per_channel(2, 3, 0.0)), relu));
  EXPECT_TRUE(bitwise_equal(rectify(x, per_channel(2, 3, 0.2)), leaky_reference(x, 0.2)));
  for (double b : {0.0, 0.2, 1.0}) {
    const auto cfg = adarelu_config(3, 4, b);
    EXPECT_TRUE(bitwise_equal(activate(x, cfg, &w), leaky_reference(x, b))) << b;
  }
  EXPECT_TRUE(bitwise_equal(activate(x, adarelu_config(3, 4, 1.0), &w), x));
}

TEST(Rectify, BackwardPiecewiseDerivatives) {
  const auto x = row({2, -1, 0, -3});
  const auto g = rectify_backward(x, per_channel(1, 1, 0.2), Tensor<double>::constant(x.shape(), 1.0));
  EXPECT_EQ(g.input[0], 1.0);
  EXPECT_EQ(g.input[1], 0.2);
  EXPECT_EQ(g.input[2], 1.0);
  // d out / d slope sums x over the negative positions.
  EXPECT_EQ(g.slopes[0], -4.0);
  const auto g3 = rectify_backward(row({-3}), per_channel(1, 1, 0.7), Tensor<double>::constant({1, 1, 1, 1}, 1.0));
  EXPECT_EQ(g3.slopes[0], -3.0);
}

TEST(NegativePart, StatisticsShiftLaw) {
  std::mt19937_64 rng(12);
  for (double a : {0.01, 0.2, 0.5, 1.0}) {
    for (int trial = 0; trial < 25; ++trial) {
      const auto x = rand_uniform<double>({1, 1, 1, 50}, rng, -5.0, -0.01);
      const auto y = rectify(x, per_channel(1, 1, a));
      const auto sx = channel_stats(x), sy = channel_stats(y);
      EXPECT_LE(std::abs(sy.mean[0] - a * sx.mean[0]), 1e-12 * std::abs(a * sx.mean[0]));
      EXPECT_LE(std::abs(sy.variance[0] - a * a * sx.variance[0]), 1e-12 * a * a * sx.variance[0]);
    }
  }
}

TEST(NormalizeKernels, Examples) {
  StruConvKernelBank<double> ones{Tensor<double>::constant({1, 1, 3, 3}, 1.0)};
  const auto n1 = normalize_kernels(ones);
  EXPECT_TRUE(((n1.raw.array() - 1.0 / 3.0).abs() < 1e-15).all());

  StruConvKernelBank<double> single{Tensor<double>({1, 1, 3, 3})};
  single.raw(0, 0, 0, 2) = 2.0;
  const auto n2 = normalize_kernels(single);
  EXPECT_EQ(n2.raw(0, 0, 0, 2), 1.0);
  EXPECT_EQ(n2.raw.array().abs().sum(), 1.0);

  std::mt19937_64 rng(3);
  StruConvKernelBank<double> k{randn<double>({4, 1, 3, 3}, rng)};
  EXPECT_LE((normalize_kernels(k).raw.array() - normalize_kernels(k.scaled(5.0)).raw.array()).abs().maxCoeff(), 1e-15);
  const auto nk = normalize_kernels(k);
  for (Index c = 0; c < 4; ++c) {
    double s = 0;
    for (Index i = 0; i < 9; ++i) s += nk.raw[c * 9 + i] * nk.raw[c * 9 + i];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(NormalizeKernels, DegenerateKernelThrows) {
  StruConvKernelBank<double> zero{Tensor<double>({2, 1, 3, 3})};
  try {
    normalize_kernels(zero);
    FAIL() << "expected a throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "degenerate kernel");
  }
}

TEST(StruConv, IdentityKernelAndZeroInput) {
  std::mt19937_64 rng(4);
  const auto x = randn<double>({2, 3, 5, 5}, rng);
  EXPECT_TRUE(bitwise_equal(struconv(x, StruConvKernelBank<double>::identity(3)), x));
  StruConvKernelBank<double> k{randn<double>({3, 1, 3, 3}, rng)};
  EXPECT_TRUE((struconv(Tensor<double>(x.shape()), k).array() == 0.0).all());
  EXPECT_THROW(struconv(x, StruConvKernelBank<double>::identity(2)), std::invalid_argument);
}

TEST(StruConv, PositiveScaleInvariance) {
  std::mt19937_64 rng(5);
  const auto x = randn<double>({2, 3, 6, 6}, rng);
  // Kernel entries on a 2^-20 grid so that every c * k below is exact.
  StruConvKernelBank<double> k{map_elements(randn<double>({3, 1, 3, 3}, rng),
                                            [](double v) { return std::ldexp(std::round(std::ldexp(v, 20)), -20); })};
  const auto base = struconv(x, k);
  for (double c : {0.5, 2.0, 10.0}) EXPECT_TRUE(bitwise_equal(struconv(x, k.scaled(c)), base)) << c;
  // The raw depthwise variant keeps the scale.
  EXPECT_FALSE(bitwise_equal(struconv(x, k.scaled(2.0), StructuralMode::dwconv), struconv(x, k, StructuralMode::dwconv)));
}

TEST(StruConv, LinearInInput) {
  std::mt19937_64 rng(6);
  const auto x = randn<double>({1, 3, 6, 6}, rng);
  const auto y = randn<double>({1, 3, 6, 6}, rng);
  StruConvKernelBank<double> k{randn<double>({3, 1, 3, 3}, rng)};
  const double alpha = 1.7, beta = -0.4;
  const auto lhs = struconv(Tensor<double>(x.shape(), alpha * x.array() + beta * y.array()), k);
  const auto rhs = alpha * struconv(x, k).array() + beta * struconv(y, k).array();
  EXPECT_LE((lhs.array() - rhs).abs().maxCoeff(), 1e-10 * rhs.abs().maxCoeff());
}

TEST(SaActivate, IdentityKernelCollapsesToRectifier) {
  std::mt19937_64 rng(7);
  const auto x = randn<double>({2, 3, 5, 5}, rng);
  ActivationConfig<double> leaky;
  leaky.kind = ActivationKind::sa_leaky_relu;
  leaky.structural = StruConvKernelBank<double>::identity(3);
  EXPECT_TRUE(bitwise_equal(sa_activate<double>(x, leaky, nullptr), leaky_reference(x, 0.2)));

  ActivationConfig<double> relu;
  relu.kind = ActivationKind::sa_relu;
  relu.structural = StruConvKernelBank<double>::identity(3);
  EXPECT_TRUE(bitwise_equal(sa_activate<double>(x, relu, nullptr), leaky_reference(x, 0.0)));
}

TEST(SaActivate, KernelScaleInvariance) {
  std::mt19937_64 rng(8);
  const auto x = randn<double>({2, 3, 5, 5}, rng);
  const auto w = randn<double>({2, 4, 1, 1}, rng);
  auto cfg = adarelu_config(3, 4, 0.2);
  cfg.kind = ActivationKind::sa_adarelu;
  const auto weight = randn<double>({3, 4, 1, 1}, rng);
  cfg.slope_affine->weight = Eigen::Map<const MatrixRM<double>>(weight.data(), 3, 4);
  cfg.structural = StruConvKernelBank<double>{randn<double>({3, 1, 3, 3}, rng)};
  auto cfg2 = cfg;
  cfg2.structural = cfg.structural->scaled(2.0);
  EXPECT_TRUE(bitwise_equal(sa_activate(x, cfg, &w), sa_activate(x, cfg2, &w)));
}

TEST(ActivationConfig, ValidateRequiresExactlyTheNeededFields) {
  ActivationConfig<double> cfg;
  cfg.kind = ActivationKind::sa_relu;
  EXPECT_THROW(cfg.validate(3), std::invalid_argument);
  cfg.structural = StruConvKernelBank<double>::identity(3);
  EXPECT_NO_THROW(cfg.validate(3));
  cfg.learned_slopes = Vector<double>::Constant(3, 0.25);
  EXPECT_THROW(cfg.validate(3), std::invalid_argument);
  ActivationConfig<double> plain;
  plain.kind = ActivationKind::relu;
  plain.structural = StruConvKernelBank<double>::identity(3);
  EXPECT_THROW(plain.validate(3), std::invalid_argument);
}

TEST(Pooling, AverageUpsampleAndGlobal) {
  const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 6});
  EXPECT_EQ(avg_pool2(x)[0], 3.0);
  EXPECT_EQ(global_avg_pool(x)[0], 3.0);
  const auto up = upsample_nearest2(Tensor<double>({1, 1, 1, 1}, {4}));
  EXPECT_EQ(up.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_TRUE((up.array() == 4.0).all());
}
