#pragma once

#include "adarelu/tape.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace adarelu {

enum class AdainMode { adain, in_only };

std::string to_string(AdainMode mode);
AdainMode parse_adain_mode(const std::string& name);

/// Architecture knobs of the miniature encoder -> translator -> decoder generator
/// and its companion networks.
struct ArchConfig {
  int image_size = 32;
  int base_channels = 32;
  int down_blocks = 2;
  int translator_blocks = 6;
  int style_dim = 16;
  int latent_dim = 8;
  int num_domains = 2;
  ActivationKind activation = ActivationKind::leaky_relu;
  double fixed_slope = 0.2;
  AdainMode adain_mode = AdainMode::adain;
  StructuralMode structural = StructuralMode::struconv;
  int mapping_hidden = 64;

  void validate() const;
  /// Generator channels after `level` down-blocks: base doubled per block, capped at 8 * base.
  int channels_at(int level) const;
  int translator_channels() const { return channels_at(down_blocks); }
  /// Down-sampling stages of the style encoder and discriminator (to a 4x4 map).
  int critic_stages() const;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Parameter-name prefixes of the four networks.
inline const std::string kGeneratorPrefix = "gen.";
inline const std::string kTranslatorPrefix = "gen.trans.";
inline const std::string kMappingPrefix = "map.";
inline const std::string kStyleEncoderPrefix = "sty.";
inline const std::string kDiscriminatorPrefix = "dis.";

struct ParameterReport {
  Index generator = 0;
  Index translator = 0;
  Index translator_structural = 0;
  Index mapping = 0;
  Index style_encoder = 0;
  Index discriminator = 0;

  /// Structural kernels relative to the translator without them, in percent.
  double structural_overhead_percent() const;
  std::string str() const;
};

/// What the translator saw at each block's rectifier: its input (after StruConv for
/// structural kinds) and the per-sample slopes applied.
template <typename Scalar>
struct TranslatorTrace {
  std::vector<Tensor<Scalar>> rectifier_inputs;
  std::vector<Tensor<Scalar>> slopes;
};

template <typename Scalar>
class TranslationModel {
 public:
  TranslationModel() = default;
  /// Wraps existing parameters; throws if any parameter the config needs is missing or misshapen.
  TranslationModel(ArchConfig config, ParameterStore<Scalar> params);

  static TranslationModel initialize(const ArchConfig& config, std::uint64_t seed);

  const ArchConfig& config() const { return config_; }
  ParameterStore<Scalar>& params() { return params_; }
  const ParameterStore<Scalar>& params() const { return params_; }

  // Recorded forward passes.
  Var generate(ParamBinder<Scalar>& b, Var image, Var style, TranslatorTrace<Scalar>* trace = nullptr) const;
  Var map_latent(ParamBinder<Scalar>& b, Var z, const std::vector<int>& domains) const;
  Var encode_style(ParamBinder<Scalar>& b, Var image, const std::vector<int>& domains) const;
  /// (N, 1, 1, 1) logits of each sample's domain head.
  Var discriminate(ParamBinder<Scalar>& b, Var image, const std::vector<int>& domains) const;

  // Inference helpers.
  Tensor<Scalar> translate(const Tensor<Scalar>& source, const Tensor<Scalar>& w,
                           TranslatorTrace<Scalar>* trace = nullptr) const;
  Tensor<Scalar> map_latent(const Tensor<Scalar>& z, int domain) const;
  Tensor<Scalar> map_latent(const Tensor<Scalar>& z, const std::vector<int>& domains) const;
  Tensor<Scalar> encode_style(const Tensor<Scalar>& image, int domain) const;
  Tensor<Scalar> encode_style(const Tensor<Scalar>& image, const std::vector<int>& domains) const;
  Tensor<Scalar> discriminate(const Tensor<Scalar>& image, int domain) const;

  /// Layer-level view of translator block `block`'s activation site.
  ActivationConfig<Scalar> activation_site(int block) const;

  ParameterReport parameter_report() const;

 private:
  void check_domains(const std::vector<int>& domains, Index batch) const;
  void check_image(const Shape& s) const;
  Var critic_trunk(ParamBinder<Scalar>& b, const std::string& prefix, Var image) const;

  ArchConfig config_;
  ParameterStore<Scalar> params_;
};

/// Names and logical shapes of every parameter `config` requires, in creation order.
std::vector<std::pair<std::string, std::vector<Index>>> parameter_layout(const ArchConfig& config);

}  // namespace adarelu
