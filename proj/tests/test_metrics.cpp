#include "metric_oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace adarelu;

namespace {

ArchConfig metric_arch(ActivationKind kind = ActivationKind::adarelu) {
  ArchConfig a;
  a.image_size = 16;
  a.base_channels = 8;
  a.translator_blocks = 2;
  a.mapping_hidden = 16;
  a.activation = kind;
  return a;
}

std::vector<Tensor<float>> random_images(Index n, std::uint64_t seed, int size = 16) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor<float>> out;
  for (Index k = 0; k < n; ++k) {
    out.push_back(map_elements(randn<float>({1, 3, size, size}, rng), [](float v) { return std::tanh(v); }));
  }
  return out;
}

TranslationModel<float> constant_output(TranslationModel<float> m) {
  m.params().at("gen.to_rgb.weight").array() = 0.0f;
  return m;
}

// Replays a fixed list of codes in order, ignoring the rng.
StyleSampler list_sampler(std::vector<Tensor<float>> codes) {
  auto next = std::make_shared<std::size_t>(0);
  return [codes = std::move(codes), next](int, std::mt19937_64&) { return codes.at((*next)++ % codes.size()); };
}

}  // namespace

TEST(ProxyFeatureNet, SeededAndDeterministic) {
  const ProxyFeatureNet a, b, c(123);
  EXPECT_EQ(a.dim(), 16 + 32 + 64 + 64);
  EXPECT_EQ(a.seed(), kDefaultFeatureSeed);
  const auto img = random_images(3, 1);
  const auto fa = a.features(stack(img));
  EXPECT_EQ(fa.rows(), 3);
  EXPECT_TRUE(fa == b.features(stack(img)));
  EXPECT_FALSE(fa == c.features(stack(img)));
  for (int n = 0; n < 3; ++n) EXPECT_TRUE(fa.row(n).transpose() == a.features_one(img[n]));
  EXPECT_THROW(a.features(Tensor<float>({1, 3, 12, 12})), std::invalid_argument);
}

TEST(FeatureDistance, IdentitySymmetryAndTriangle) {
  const ProxyFeatureNet net;
  const auto img = random_images(300, 2);
  for (int t = 0; t < 100; ++t) {
    const auto& x = img[3 * t];
    const auto& y = img[3 * t + 1];
    const auto& z = img[3 * t + 2];
    EXPECT_EQ(feature_distance(x, x, net), 0.0);
    const double xy = feature_distance(x, y, net);
    EXPECT_EQ(xy, feature_distance(y, x, net));
    EXPECT_LE(feature_distance(x, z, net), xy + feature_distance(y, z, net) + 1e-15);
  }
  EXPECT_THROW(feature_distance(img[0], random_images(1, 3, 32)[0], net), std::invalid_argument);
}

TEST(FeatureL1, Examples) {
  Eigen::VectorXd a(3), b(3);
  a << 0, 1, 2;
  b << 1, 1, -1;
  EXPECT_DOUBLE_EQ(feature_l1(a, b), 4.0 / 3.0);
  EXPECT_EQ(feature_l1(a, a), 0.0);
}

TEST(Diversity, ConstantGeneratorGivesZero) {
  const auto m = constant_output(TranslationModel<float>::initialize(metric_arch(), 1));
  const ProxyFeatureNet net;
  std::mt19937_64 rng(2);
  EXPECT_EQ(diversity(m, random_images(3, 4), 1, latent_sampler(m), net, rng), 0.0);
}

TEST(Diversity, MatchesBruteForceOracle) {
  const ProxyFeatureNet net;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto m = TranslationModel<float>::initialize(metric_arch(), seed);
    const auto src = random_images(2, 10 + seed);
    std::mt19937_64 r1(seed), r2(seed);
    const double lib = diversity(m, src, 1, latent_sampler(m), net, r1);
    const auto ref = oracle::diversity(m, src, 1, latent_sampler(m), net, r2);
    EXPECT_EQ(ref.distances, 2 * 45);
    EXPECT_GT(lib, 0.0);
    EXPECT_LE(std::abs(lib - ref.value), 1e-12 * std::max(1.0, ref.value));
  }
}

TEST(Diversity, SingleSourceAveragesFortyFivePairs) {
  const ProxyFeatureNet net;
  const auto m = TranslationModel<float>::initialize(metric_arch(), 5);
  const auto src = random_images(1, 6);
  std::mt19937_64 r1(7), r2(7);
  const double lib = diversity(m, src, 0, latent_sampler(m), net, r1);
  const auto ref = oracle::diversity(m, src, 0, latent_sampler(m), net, r2);
  EXPECT_EQ(ref.distances, 45);
  EXPECT_LE(std::abs(lib - ref.value), 1e-12 * ref.value);
}

TEST(Diversity, InvariantToCodeOrder) {
  const ProxyFeatureNet net;
  const auto m = TranslationModel<float>::initialize(metric_arch(), 8);
  std::mt19937_64 rng(9);
  std::vector<Tensor<float>> codes;
  for (int k = 0; k < kDiversityCodes; ++k) codes.push_back(m.map_latent(randn<float>({1, 8, 1, 1}, rng), 1));
  const auto src = random_images(1, 10);
  const double a = diversity(m, src, 1, list_sampler(codes), net, rng);
  std::shuffle(codes.begin(), codes.end(), rng);
  const double b = diversity(m, src, 1, list_sampler(codes), net, rng);
  // Batch position can move single-precision translations by an ulp.
  EXPECT_NEAR(a, b, 1e-6 * a);
}

TEST(Diversity, Errors) {
  const auto m = TranslationModel<float>::initialize(metric_arch(), 1);
  const ProxyFeatureNet net;
  std::mt19937_64 rng(0);
  EXPECT_THROW(diversity(m, {}, 0, latent_sampler(m), net, rng), std::invalid_argument);
}

TEST(Controllability, ConstantGeneratorGivesZero) {
  const auto m = constant_output(TranslationModel<float>::initialize(metric_arch(), 11));
  const ProxyFeatureNet net;
  std::mt19937_64 rng(12);
  EXPECT_EQ(controllability(m, random_images(32, 13), 0, latent_sampler(m), net, rng, 2), 0.0);
}

TEST(Controllability, MatchesBruteForceOracle) {
  const ProxyFeatureNet net;
  const auto m = TranslationModel<float>::initialize(metric_arch(), 14);
  const auto src = random_images(32, 15);
  std::mt19937_64 r1(16), r2(16);
  const double lib = controllability(m, src, 1, latent_sampler(m), net, r1);
  const auto ref = oracle::controllability(m, src, 1, latent_sampler(m), net, r2);
  EXPECT_EQ(ref.distances, 160);
  EXPECT_GT(lib, 0.0);
  EXPECT_LE(std::abs(lib - ref.value), 1e-12 * ref.value);
}

TEST(Controllability, InvariantToRoundOrder) {
  const ProxyFeatureNet net;
  const auto m = TranslationModel<float>::initialize(metric_arch(), 17);
  std::mt19937_64 rng(18);
  std::vector<Tensor<float>> codes;
  for (int k = 0; k < 4; ++k) codes.push_back(m.map_latent(randn<float>({1, 8, 1, 1}, rng), 0));
  const auto src = random_images(32, 19);
  const double a = controllability(m, src, 0, list_sampler(codes), net, rng, 4);
  std::reverse(codes.begin(), codes.end());
  const double b = controllability(m, src, 0, list_sampler(codes), net, rng, 4);
  EXPECT_NEAR(a, b, 1e-12 * a);
}

TEST(Controllability, RequiresExactlyThirtyTwoSources) {
  const auto m = TranslationModel<float>::initialize(metric_arch(), 1);
  const ProxyFeatureNet net;
  std::mt19937_64 rng(0);
  EXPECT_THROW(controllability(m, random_images(31, 1), 0, latent_sampler(m), net, rng), std::invalid_argument);
  EXPECT_THROW(controllability(m, random_images(33, 1), 0, latent_sampler(m), net, rng), std::invalid_argument);
}

TEST(Frechet, IdenticalSetsGiveZero) {
  const ProxyFeatureNet net;
  const auto set = random_images(40, 20);
  EXPECT_LE(fid_proxy(set, set, net), 1e-6);
  EXPECT_GE(fid_proxy(set, random_images(40, 21), net), 0.0);
  EXPECT_THROW(fid_proxy({set[0]}, set, net), std::invalid_argument);
}

TEST(Frechet, EqualIdentityCovariancesClosedForm) {
  for (int d : {1, 5, 32}) {
    const Eigen::VectorXd mu_a = Eigen::VectorXd::Zero(d), mu_b = Eigen::VectorXd::Ones(d);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    EXPECT_NEAR(frechet_distance(mu_a, I, mu_b, I), d, 1e-10 * d);
  }
}

TEST(Frechet, EqualCovarianceReducesToMeanDistance) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const Index d = 12;
    Eigen::MatrixXd g(d, 2 * d);
    std::normal_distribution<double> nd;
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
    const Eigen::MatrixXd cov = g * g.transpose() / (2.0 * d);
    Eigen::VectorXd mu_a(d), mu_b(d);
    for (Index i = 0; i < d; ++i) {
      mu_a[i] = nd(rng);
      mu_b[i] = nd(rng);
    }
    const double expected = (mu_a - mu_b).squaredNorm();
    EXPECT_NEAR(frechet_distance(mu_a, cov, mu_b, cov), expected, 1e-8 * std::max(1.0, expected));
  }
}

TEST(Frechet, MatchesIndependentOracleAndIsNonNegative) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 6, n = trial % 2 ? 4 : 30;  // n < d gives singular covariances
    Eigen::MatrixXd a(n, d), b(n, d);
    for (Index i = 0; i < a.size(); ++i) {
      a.data()[i] = nd(rng);
      b.data()[i] = 0.5 * nd(rng) + 0.2;
    }
    const double lib = frechet_from_features(a, b);
    EXPECT_GE(lib, 0.0);
    const auto fit = [](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
      mu = x.colwise().mean().transpose();
      const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
      cov = c.transpose() * c / static_cast<double>(x.rows() - 1);
    };
    Eigen::VectorXd ma, mb;
    Eigen::MatrixXd ca, cb;
    fit(a, ma, ca);
    fit(b, mb, cb);
    // Rank-deficient covariances leave eigenvalues at roundoff level, whose square roots
    // (about 1e-8) the library floors to zero.
    EXPECT_NEAR(lib, oracle::frechet(ma, ca, mb, cb), (n < d ? 1e-6 : 1e-10) * std::max(1.0, lib));
  }
}

TEST(NegativePartStats, Examples) {
  const Tensor<double> x({1, 1, 1, 3}, {-1, -2, -3});
  const auto s = negative_part_stats(x, 0.2);
  EXPECT_NEAR(s.mean_ratio, 0.2, 1e-15);
  EXPECT_NEAR(s.var_ratio, 0.04, 1e-15);
  EXPECT_EQ(s.count, 3);
  const auto one = negative_part_stats(x, 1.0);
  EXPECT_EQ(one.mean_ratio, 1.0);
  EXPECT_EQ(one.var_ratio, 1.0);
  const auto zero = negative_part_stats(x, 0.0);
  EXPECT_EQ(zero.mean_ratio, 0.0);
  EXPECT_EQ(zero.var_ratio, 0.0);
}

TEST(NegativePartStats, IgnoresPositivesAndRejectsDegenerateInput) {
  const Tensor<double> x({1, 1, 2, 3}, {-1, 5, -3, 7, 0, 2});
  const auto s = negative_part_stats(x, 0.5);
  EXPECT_EQ(s.count, 2);
  EXPECT_NEAR(s.mean_ratio, 0.5, 1e-15);
  EXPECT_NEAR(s.var_ratio, 0.25, 1e-15);
  EXPECT_THROW(negative_part_stats(Tensor<double>({1, 1, 1, 3}, {-1, 2, 3}), 0.2), std::invalid_argument);
  EXPECT_THROW(negative_part_stats(Tensor<double>({1, 1, 1, 3}, {-2, -2, 3}), 0.2), std::invalid_argument);
}

TEST(NegativePartStats, RatiosAreSlopeAndSquareForRandomInputs) {
  std::mt19937_64 rng(24);
  for (double a : {0.01, 0.2, 0.5, 1.0}) {
    for (int t = 0; t < 25; ++t) {
      const auto x = randn<double>({2, 3, 5, 5}, rng, 2.0, 0.3);
      const auto s = negative_part_stats(x, a);
      EXPECT_NEAR(s.mean_ratio, a, 1e-10);
      EXPECT_NEAR(s.var_ratio, a * a, 1e-10);
      Tensor<double> shuffled = x;
      std::shuffle(shuffled.data(), shuffled.data() + shuffled.size(), rng);
      EXPECT_NEAR(negative_part_stats(shuffled, a).mean_ratio, s.mean_ratio, 1e-14);
    }
  }
}

TEST(Evaluate, ReportLayoutAndDeterminism) {
  const auto samples = generate_dataset(4, 32, 16);
  const auto m = TranslationModel<float>::initialize(metric_arch(), 25);
  EvalConfig cfg;
  cfg.diversity_sources = 2;
  std::vector<Tensor<float>> grids;
  const auto r1 = evaluate(m, samples, cfg, &grids);
  const auto r2 = evaluate(m, samples, cfg);
  EXPECT_EQ(r1.csv(), r2.csv());
  EXPECT_EQ(grids.size(), 4u);
  EXPECT_EQ(r1.rows.size(), 12u);
  EXPECT_EQ(r1.csv().substr(0, r1.csv().find('\n')), "metric,split,source_domain,target_domain,mode,value");
  double div = 0.0, ctl = 0.0;
  for (const auto& row : r1.rows) {
    EXPECT_GE(row.value, 0.0);
    EXPECT_EQ(row.split, row.source_domain == row.target_domain ? "internal" : "cross");
    if (row.split == "cross" && row.metric == "diversity") div += row.value / 2;
    if (row.split == "cross" && row.metric == "controllability") ctl += row.value / 2;
  }
  EXPECT_NEAR(r1.diversity, div, 1e-15);
  EXPECT_NEAR(r1.controllability, ctl, 1e-15);

  EvalConfig ref = cfg;
  ref.mode = GuidanceMode::reference;
  EXPECT_NE(evaluate(m, samples, ref).csv(), r1.csv());
}

TEST(Evaluate, ConstantGeneratorScoresZero) {
  const auto samples = generate_dataset(5, 32, 16);
  const auto m = constant_output(TranslationModel<float>::initialize(metric_arch(), 26));
  EvalConfig cfg;
  cfg.diversity_sources = 1;
  const auto r = evaluate(m, samples, cfg);
  EXPECT_EQ(r.diversity, 0.0);
  EXPECT_EQ(r.controllability, 0.0);
}

TEST(GuidanceMode, ParseAndPrint) {
  EXPECT_EQ(parse_guidance_mode("latent"), GuidanceMode::latent);
  EXPECT_EQ(parse_guidance_mode("ref"), GuidanceMode::reference);
  EXPECT_EQ(to_string(GuidanceMode::reference), "ref");
  EXPECT_THROW(parse_guidance_mode("both"), std::invalid_argument);
}
