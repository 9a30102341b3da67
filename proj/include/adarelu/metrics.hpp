#pragma once

#include "adarelu/model.hpp"
#include "adarelu/synth.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace adarelu {

inline constexpr std::uint64_t kDefaultFeatureSeed = 0x1f2e3d4c5b6a7988ULL;

/// Frozen random conv net: four (3x3 conv, leaky ReLU 0.2, 2x2 average pool) stages.
/// Features are the per-channel spatial means after each stage, concatenated.
/// Stands in for a pretrained perceptual network.
class ProxyFeatureNet {
 public:
  static constexpr int kStages = 4;

  explicit ProxyFeatureNet(std::uint64_t seed = kDefaultFeatureSeed, std::vector<int> widths = {16, 32, 64, 64});

  std::uint64_t seed() const { return seed_; }
  Index dim() const;

  /// One row per sample of a (N, 3, H, W) batch; H and W must be multiples of 16.
  Eigen::MatrixXd features(const Tensor<float>& images) const;
  Eigen::VectorXd features_one(const Tensor<float>& image) const;

 private:
  std::uint64_t seed_;
  std::vector<Tensor<double>> weights_;
  std::vector<Vector<double>> biases_;
};

/// Mean absolute difference of two feature vectors.
double feature_l1(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

/// feature_l1 of the proxy features of two single images.
double feature_distance(const Tensor<float>& a, const Tensor<float>& b, const ProxyFeatureNet& net);

enum class GuidanceMode { latent, reference };
std::string to_string(GuidanceMode mode);
GuidanceMode parse_guidance_mode(const std::string& name);

/// Draws one (1, style_dim) code for a target domain.
using StyleSampler = std::function<Tensor<float>(int target_domain, std::mt19937_64& rng)>;

/// z ~ N(0, I) through the mapping network.
StyleSampler latent_sampler(const TranslationModel<float>& model);
/// A uniformly chosen image of the target domain through the style encoder.
StyleSampler reference_sampler(const TranslationModel<float>& model,
                               std::vector<std::vector<Tensor<float>>> references_by_domain);

inline constexpr int kDiversityCodes = 10;
inline constexpr Index kControllabilitySources = 32;
inline constexpr int kControllabilityRounds = 10;

/// Each source is translated with `codes` codes drawn in order; the mean feature distance
/// over all unordered output pairs is averaged over sources.
double diversity(const TranslationModel<float>& model, const std::vector<Tensor<float>>& sources, int target_domain,
                 const StyleSampler& sampler, const ProxyFeatureNet& net, std::mt19937_64& rng,
                 int codes = kDiversityCodes);

/// Per round, all 32 sources share one code; outputs are paired (0,1), (2,3), ... in source
/// order and the 16 distances averaged. Rounds are averaged. Throws unless there are 32 sources.
double controllability(const TranslationModel<float>& model, const std::vector<Tensor<float>>& sources,
                       int target_domain, const StyleSampler& sampler, const ProxyFeatureNet& net,
                       std::mt19937_64& rng, int rounds = kControllabilityRounds);

/// Frechet distance between Gaussians; eigenvalues below a small multiple of machine
/// precision (relative to the largest) are treated as zero.
double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                        const Eigen::MatrixXd& cov_b);
/// Frechet distance of Gaussians fit to feature rows (unbiased covariance); >= 2 rows each.
double frechet_from_features(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double fid_proxy(const std::vector<Tensor<float>>& set_a, const std::vector<Tensor<float>>& set_b,
                 const ProxyFeatureNet& net);

struct NegativePartStats {
  double mean_ratio = 0.0;
  double var_ratio = 0.0;
  Index count = 0;
};

/// Mean and population-variance ratios of the negative entries of x after vs before a
/// rectifier with negative slope a. Throws with fewer than 2 negatives or zero variance.
NegativePartStats negative_part_stats(const Tensor<double>& x, double slope);

struct MetricRow {
  std::string metric;  // diversity | controllability | fid_proxy
  std::string split;   // cross | internal
  int source_domain = 0;
  int target_domain = 0;
  double value = 0.0;
};

struct MetricsReport {
  GuidanceMode mode = GuidanceMode::latent;
  // Cross-domain means.
  double diversity = 0.0;
  double controllability = 0.0;
  double fid_proxy = 0.0;
  std::vector<MetricRow> rows;

  std::string csv() const;
};

struct EvalConfig {
  GuidanceMode mode = GuidanceMode::latent;
  std::uint64_t seed = 0;
  Index diversity_sources = 8;  // per (source, target) domain pair
  std::uint64_t feature_seed = kDefaultFeatureSeed;
};

/// Source images per domain, test split first then train, in dataset order.
std::vector<std::vector<Tensor<float>>> eval_sources(const std::vector<SynthSample>& samples, int num_domains);

/// Every (source, target) domain pair: cross-domain when they differ, internal when equal.
/// fid_proxy compares the diversity outputs with all real images of the target domain.
MetricsReport evaluate(const TranslationModel<float>& model, const std::vector<SynthSample>& samples,
                       const EvalConfig& config, std::vector<Tensor<float>>* grids = nullptr);

}  // namespace adarelu
