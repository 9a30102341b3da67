#pragma once

#include "adarelu/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace adarelu {

inline constexpr int kStripesDomain = 0;
inline constexpr int kDotsDomain = 1;
inline constexpr int kSubcategories = 4;
inline constexpr Index kMinCountPerDomain = 32;

struct SynthSample {
  Tensor<float> image;  // (1, 3, size, size) in [-1, 1]
  int domain = 0;
  int subcategory = 0;  // stripes: orientation 0/45/90/135 degrees; dots: radius class
  Index index = 0;      // position within its domain
  bool train = true;
};

/// Sample `index` of `domain`. Pure function of its arguments.
SynthSample synth_sample(std::uint64_t seed, int domain, Index index, int image_size = 32);

/// count_per_domain samples of each domain; subcategory = index mod 4, so counts that are
/// multiples of 4 are exactly balanced. Throws when count_per_domain < 32.
std::vector<SynthSample> generate_dataset(std::uint64_t seed, Index count_per_domain, int image_size = 32);

/// Roughly 90/10 train/test membership from a hash of (domain, index).
bool is_train_index(int domain, Index index);

/// Subcategory read back from pixels: the orientation of the structure tensor for
/// stripes, the foreground coverage for dots.
int recover_subcategory(const Tensor<float>& image, int domain);

/// Coherence (l1 - l2) / (l1 + l2) of the image's structure tensor. Near 1 for stripes,
/// near 0 for dots.
double anisotropy(const Tensor<float>& image);

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  int domain = 0;
  int subcategory = 0;
};

/// Writes train/ and test/ PNGs plus manifest.txt ("path domain subcategory" per line).
std::vector<ManifestEntry> write_dataset(const std::vector<SynthSample>& samples, const std::string& root);

std::vector<ManifestEntry> read_manifest(const std::string& root);

/// Samples loaded back from a dataset directory; train/test follows the path prefix.
std::vector<SynthSample> load_dataset(const std::string& root);

}  // namespace adarelu
