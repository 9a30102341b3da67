#include "adarelu/synth.hpp"

#include "adarelu/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace adarelu {

namespace {

using Rgb = std::array<double, 3>;

struct Palette {
  Rgb fg;  // always the brighter colour
  Rgb bg;
};

// Four palettes per domain, one per subcategory.
const std::array<std::array<Palette, 4>, 2> kPalettes = {{
    {{{{0.90, 0.50, -0.20}, {-0.60, -0.70, -0.80}},
      {{0.30, 0.90, 0.40}, {-0.80, -0.50, -0.70}},
      {{0.40, 0.60, 0.95}, {-0.70, -0.80, -0.40}},
      {{0.95, 0.90, 0.60}, {-0.50, -0.80, -0.60}}}},
    {{{{0.90, 0.30, 0.30}, {-0.70, -0.60, -0.50}},
      {{0.80, 0.80, 0.20}, {-0.50, -0.80, -0.80}},
      {{0.20, 0.85, 0.85}, {-0.80, -0.70, -0.50}},
      {{0.85, 0.50, 0.90}, {-0.60, -0.50, -0.80}}}},
}};

constexpr std::array<double, 4> kDotRadii = {1.3, 2.0, 2.6, 3.1};
constexpr double kDotPeriod = 8.0;

Rgb jitter(const Rgb& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  Rgb out;
  for (int k = 0; k < 3; ++k) out[k] = std::clamp(c[k] + u(rng), -1.0, 1.0);
  return out;
}

void paint(Tensor<float>& img, Index y, Index x, const Palette& p, double coverage) {
  for (Index c = 0; c < 3; ++c) img(0, c, y, x) = static_cast<float>(p.bg[c] + coverage * (p.fg[c] - p.bg[c]));
}

double torus_distance(double a, double b) {
  const double d = std::fmod(std::abs(a - b), kDotPeriod);
  return std::min(d, kDotPeriod - d);
}

Eigen::ArrayXXd luminance(const Tensor<float>& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw std::invalid_argument("expected a (1, 3, H, W) image, got " + s.str());
  Eigen::ArrayXXd lum = Eigen::ArrayXXd::Zero(s.h, s.w);
  for (Index c = 0; c < 3; ++c) {
    for (Index y = 0; y < s.h; ++y) {
      for (Index x = 0; x < s.w; ++x) lum(y, x) += image(0, c, y, x) / 3.0;
    }
  }
  return lum;
}

struct StructureTensor {
  double xx = 0, xy = 0, yy = 0;
};

StructureTensor structure_tensor(const Eigen::ArrayXXd& lum) {
  StructureTensor j;
  for (Index y = 1; y + 1 < lum.rows(); ++y) {
    for (Index x = 1; x + 1 < lum.cols(); ++x) {
      const double gx = 0.5 * (lum(y, x + 1) - lum(y, x - 1));
      const double gy = 0.5 * (lum(y + 1, x) - lum(y - 1, x));
      j.xx += gx * gx;
      j.xy += gx * gy;
      j.yy += gy * gy;
    }
  }
  return j;
}

}  // namespace

bool is_train_index(int domain, Index index) {
  return mix_seed((static_cast<std::uint64_t>(domain) << 32) ^ static_cast<std::uint64_t>(index)) % 10 != 0;
}

SynthSample synth_sample(std::uint64_t seed, int domain, Index index, int image_size) {
  if (domain != kStripesDomain && domain != kDotsDomain) throw std::invalid_argument("domain must be 0 or 1");
  if (image_size < 8 || image_size % 8 != 0) throw std::invalid_argument("image_size must be a multiple of 8");
  std::mt19937_64 rng(mix_seed(seed ^ mix_seed((static_cast<std::uint64_t>(domain) << 32) + index)));
  SynthSample s;
  s.domain = domain;
  s.index = index;
  s.subcategory = static_cast<int>(index % kSubcategories);
  s.train = is_train_index(domain, index);
  const Palette& base = kPalettes[domain][s.subcategory];
  const Palette pal{jitter(base.fg, rng), jitter(base.bg, rng)};
  s.image = Tensor<float>({1, 3, image_size, image_size});
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (domain == kStripesDomain) {
    const double theta = s.subcategory * std::numbers::pi / 4.0;
    const double period = 5.0 + 3.0 * u01(rng);
    const double phase = 2.0 * std::numbers::pi * u01(rng);
    for (Index y = 0; y < image_size; ++y) {
      for (Index x = 0; x < image_size; ++x) {
        const double t = x * std::cos(theta) + y * std::sin(theta);
        const double wave = std::sin(2.0 * std::numbers::pi * t / period + phase);
        paint(s.image, y, x, pal, std::clamp(0.5 + 1.5 * wave, 0.0, 1.0));
      }
    }
  } else {
    const double radius = kDotRadii[s.subcategory] + 0.16 * (u01(rng) - 0.5);
    const double ox = kDotPeriod * u01(rng), oy = kDotPeriod * u01(rng);
    constexpr int kSuper = 4;
    for (Index y = 0; y < image_size; ++y) {
      for (Index x = 0; x < image_size; ++x) {
        int inside = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const double px = x + (sx + 0.5) / kSuper, py = y + (sy + 0.5) / kSuper;
            const double dx = torus_distance(px, ox), dy = torus_distance(py, oy);
            inside += dx * dx + dy * dy <= radius * radius;
          }
        }
        paint(s.image, y, x, pal, static_cast<double>(inside) / (kSuper * kSuper));
      }
    }
  }
  return s;
}

std::vector<SynthSample> generate_dataset(std::uint64_t seed, Index count_per_domain, int image_size) {
  if (count_per_domain < kMinCountPerDomain) {
    throw std::invalid_argument("count too small: need at least " + std::to_string(kMinCountPerDomain) +
                                " samples per domain, got " + std::to_string(count_per_domain));
  }
  std::vector<SynthSample> out;
  out.reserve(static_cast<std::size_t>(2 * count_per_domain));
  for (int d : {kStripesDomain, kDotsDomain}) {
    for (Index i = 0; i < count_per_domain; ++i) out.push_back(synth_sample(seed, d, i, image_size));
  }
  return out;
}

double anisotropy(const Tensor<float>& image) {
  const StructureTensor j = structure_tensor(luminance(image));
  const double trace = j.xx + j.yy;
  if (trace <= 0.0) return 0.0;
  return std::sqrt((j.xx - j.yy) * (j.xx - j.yy) + 4.0 * j.xy * j.xy) / trace;
}

int recover_subcategory(const Tensor<float>& image, int domain) {
  const Eigen::ArrayXXd lum = luminance(image);
  if (domain == kStripesDomain) {
    const StructureTensor j = structure_tensor(lum);
    double angle = 0.5 * std::atan2(2.0 * j.xy, j.xx - j.yy);  // dominant gradient direction
    if (angle < 0) angle += std::numbers::pi;
    return static_cast<int>(std::lround(angle / (std::numbers::pi / 4.0))) % kSubcategories;
  }
  if (domain != kDotsDomain) throw std::invalid_argument("domain must be 0 or 1");
  // Pixels are linear in coverage, so normalized luminance averages to the covered fraction.
  const double lo = lum.minCoeff(), hi = lum.maxCoeff();
  const double coverage = hi > lo ? ((lum - lo) / (hi - lo)).mean() : 0.0;
  int best = 0;
  for (int k = 1; k < kSubcategories; ++k) {
    const double expected = std::numbers::pi * kDotRadii[k] * kDotRadii[k] / (kDotPeriod * kDotPeriod);
    const double current = std::numbers::pi * kDotRadii[best] * kDotRadii[best] / (kDotPeriod * kDotPeriod);
    if (std::abs(coverage - expected) < std::abs(coverage - current)) best = k;
  }
  return best;
}

std::vector<ManifestEntry> write_dataset(const std::vector<SynthSample>& samples, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "train");
  fs::create_directories(fs::path(root) / "test");
  std::vector<ManifestEntry> entries;
  std::ofstream manifest(fs::path(root) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + root);
  for (const auto& s : samples) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s/d%d_%05ld.png", s.train ? "train" : "test", s.domain,
                  static_cast<long>(s.index));
    save_png(s.image, (fs::path(root) / name).string());
    entries.push_back({name, s.domain, s.subcategory});
    manifest << name << ' ' << s.domain << ' ' << s.subcategory << '\n';
  }
  if (!manifest) throw std::runtime_error("cannot write manifest in " + root);
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::string& root) {
  const auto path = std::filesystem::path(root) / "manifest.txt";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing manifest: " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string extra;
    if (!(ls >> e.path >> e.domain >> e.subcategory) || (ls >> extra) || e.domain < 0 || e.subcategory < 0) {
      throw std::runtime_error("malformed manifest line " + std::to_string(line_no) + ": " + line);
    }
    entries.push_back(e);
  }
  return entries;
}

std::vector<SynthSample> load_dataset(const std::string& root) {
  std::vector<SynthSample> out;
  std::array<Index, 64> per_domain{};
  for (const auto& e : read_manifest(root)) {
    SynthSample s;
    s.image = load_png((std::filesystem::path(root) / e.path).string());
    s.domain = e.domain;
    s.subcategory = e.subcategory;
    s.train = e.path.rfind("test/", 0) != 0;
    if (e.domain < static_cast<int>(per_domain.size())) s.index = per_domain[e.domain]++;
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("empty dataset in " + root);
  return out;
}

}  // namespace adarelu
