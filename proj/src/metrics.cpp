#include "adarelu/metrics.hpp"

#include "adarelu/image_io.hpp"
#include "adarelu/layers.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace adarelu {

ProxyFeatureNet::ProxyFeatureNet(std::uint64_t seed, std::vector<int> widths) : seed_(seed) {
  if (widths.size() != kStages) throw std::invalid_argument("ProxyFeatureNet needs 4 stage widths");
  std::mt19937_64 rng(mix_seed(seed));
  Index in = 3;
  for (int out : widths) {
    if (out < 1) throw std::invalid_argument("ProxyFeatureNet widths must be positive");
    weights_.push_back(randn<double>({out, in, 3, 3}, rng, std::sqrt(2.0 / static_cast<double>(9 * in))));
    biases_.push_back(Vector<double>::Zero(out));
    in = out;
  }
}

Index ProxyFeatureNet::dim() const {
  Index d = 0;
  for (const auto& w : weights_) d += w.shape().n;
  return d;
}

Eigen::MatrixXd ProxyFeatureNet::features(const Tensor<float>& images) const {
  const Shape& s = images.shape();
  if (s.c != 3 || s.h % 16 != 0 || s.w % 16 != 0 || s.h < 16 || s.w < 16) {
    throw std::invalid_argument("proxy features need (N, 3, H, W) images with H, W multiples of 16, got " + s.str());
  }
  Eigen::MatrixXd out(s.n, dim());
  Tensor<double> x = images.cast<double>();
  Index col = 0;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    x = conv2d(x, weights_[k], biases_[k], {1, 1});
    x.array() = x.array().max(0.2 * x.array());
    x = avg_pool2(x);
    const Tensor<double> pooled = global_avg_pool(x);
    const Index c = x.shape().c;
    for (Index n = 0; n < s.n; ++n) {
      for (Index ch = 0; ch < c; ++ch) out(n, col + ch) = pooled(n, ch, 0, 0);
    }
    col += c;
  }
  return out;
}

Eigen::VectorXd ProxyFeatureNet::features_one(const Tensor<float>& image) const {
  if (image.shape().n != 1) throw std::invalid_argument("features_one expects a single image");
  return features(image).row(0).transpose();
}

double feature_l1(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size() || a.size() == 0) throw std::invalid_argument("feature_l1: mismatched feature vectors");
  return (a - b).cwiseAbs().mean();
}

double feature_distance(const Tensor<float>& a, const Tensor<float>& b, const ProxyFeatureNet& net) {
  require_same_shape(a.shape(), b.shape(), "feature_distance");
  return feature_l1(net.features_one(a), net.features_one(b));
}

std::string to_string(GuidanceMode mode) { return mode == GuidanceMode::latent ? "latent" : "ref"; }

GuidanceMode parse_guidance_mode(const std::string& name) {
  if (name == "latent") return GuidanceMode::latent;
  if (name == "ref" || name == "reference") return GuidanceMode::reference;
  throw std::invalid_argument("unknown guidance mode: " + name);
}

StyleSampler latent_sampler(const TranslationModel<float>& model) {
  return [&model](int domain, std::mt19937_64& rng) {
    const Tensor<float> z = randn<float>({1, model.config().latent_dim, 1, 1}, rng);
    return model.map_latent(z, domain);
  };
}

StyleSampler reference_sampler(const TranslationModel<float>& model,
                               std::vector<std::vector<Tensor<float>>> references_by_domain) {
  return [&model, refs = std::move(references_by_domain)](int domain, std::mt19937_64& rng) {
    if (domain < 0 || domain >= static_cast<int>(refs.size()) || refs[domain].empty()) {
      throw std::invalid_argument("no reference images for domain " + std::to_string(domain));
    }
    std::uniform_int_distribution<std::size_t> pick(0, refs[domain].size() - 1);
    return model.encode_style(refs[domain][pick(rng)], domain);
  };
}

namespace {

Tensor<float> repeat(const Tensor<float>& image, Index times) {
  return stack(std::vector<Tensor<float>>(static_cast<std::size_t>(times), image));
}

}  // namespace

double diversity(const TranslationModel<float>& model, const std::vector<Tensor<float>>& sources, int target_domain,
                 const StyleSampler& sampler, const ProxyFeatureNet& net, std::mt19937_64& rng, int codes) {
  if (sources.empty()) throw std::invalid_argument("diversity: empty source list");
  if (codes < 2) throw std::invalid_argument("diversity: need at least 2 style codes");
  double total = 0.0;
  for (const auto& src : sources) {
    std::vector<Tensor<float>> w;
    for (int k = 0; k < codes; ++k) w.push_back(sampler(target_domain, rng));
    const Eigen::MatrixXd f = net.features(model.translate(repeat(src, codes), stack(w)));
    double sum = 0.0;
    for (int i = 0; i < codes; ++i) {
      for (int j = i + 1; j < codes; ++j) sum += feature_l1(f.row(i).transpose(), f.row(j).transpose());
    }
    total += sum / (codes * (codes - 1) / 2);
  }
  return total / static_cast<double>(sources.size());
}

double controllability(const TranslationModel<float>& model, const std::vector<Tensor<float>>& sources,
                       int target_domain, const StyleSampler& sampler, const ProxyFeatureNet& net,
                       std::mt19937_64& rng, int rounds) {
  if (static_cast<Index>(sources.size()) != kControllabilitySources) {
    throw std::invalid_argument("controllability needs exactly 32 sources, got " + std::to_string(sources.size()));
  }
  if (rounds < 1) throw std::invalid_argument("controllability: need at least 1 round");
  const Tensor<float> batch = stack(sources);
  double total = 0.0;
  for (int r = 0; r < rounds; ++r) {
    const Tensor<float> w = sampler(target_domain, rng);
    const Eigen::MatrixXd f = net.features(model.translate(batch, repeat(w, kControllabilitySources)));
    double sum = 0.0;
    for (Index p = 0; p < kControllabilitySources; p += 2) sum += feature_l1(f.row(p).transpose(), f.row(p + 1).transpose());
    total += sum / static_cast<double>(kControllabilitySources / 2);
  }
  return total / rounds;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  const double floor = 64.0 * static_cast<double>(m.rows()) * std::numeric_limits<double>::epsilon() *
                       std::max(ev.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  ev = ev.unaryExpr([floor](double v) { return v > floor ? std::sqrt(v) : 0.0; });
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                        const Eigen::MatrixXd& cov_b) {
  const Index d = mu_a.size();
  if (mu_b.size() != d || cov_a.rows() != d || cov_a.cols() != d || cov_b.rows() != d || cov_b.cols() != d) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  // tr((A B)^1/2) = tr((A^1/2 B A^1/2)^1/2), which is symmetric.
  const Eigen::MatrixXd sa = psd_sqrt(cov_a);
  const double cross = psd_sqrt(sa * cov_b * sa).trace();
  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
  return std::max(value, 0.0);
}

double frechet_from_features(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("fid_proxy needs at least 2 images per set");
  auto fit = [](const Eigen::MatrixXd& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = f.colwise().mean().transpose();
    const Eigen::MatrixXd c = f.rowwise() - mu.transpose();
    cov = c.transpose() * c / static_cast<double>(f.rows() - 1);
  };
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  fit(a, mu_a, cov_a);
  fit(b, mu_b, cov_b);
  return frechet_distance(mu_a, cov_a, mu_b, cov_b);
}

double fid_proxy(const std::vector<Tensor<float>>& set_a, const std::vector<Tensor<float>>& set_b,
                 const ProxyFeatureNet& net) {
  if (set_a.size() < 2 || set_b.size() < 2) throw std::invalid_argument("fid_proxy needs at least 2 images per set");
  return frechet_from_features(net.features(stack(set_a)), net.features(stack(set_b)));
}

NegativePartStats negative_part_stats(const Tensor<double>& x, double slope) {
  std::vector<double> before;
  for (Index k = 0; k < x.size(); ++k) {
    if (x[k] < 0) before.push_back(x[k]);
  }
  if (before.size() < 2) throw std::invalid_argument("negative_part_stats needs at least 2 negative values");
  const Tensor<double> after_all = rectify(x, Tensor<double>::constant({x.shape().n, x.shape().c, 1, 1}, slope));
  std::vector<double> after;
  for (Index k = 0; k < x.size(); ++k) {
    if (x[k] < 0) after.push_back(after_all[k]);
  }
  auto moments = [](const std::vector<double>& v) {
    const Eigen::Map<const Eigen::ArrayXd> a(v.data(), static_cast<Index>(v.size()));
    const double mean = a.mean();
    return std::pair{mean, (a - mean).square().mean()};
  };
  const auto [m0, v0] = moments(before);
  const auto [m1, v1] = moments(after);
  if (v0 == 0.0) throw std::invalid_argument("negative_part_stats: negative part has zero variance");
  return {m1 / m0, v1 / v0, static_cast<Index>(before.size())};
}

std::string MetricsReport::csv() const {
  std::ostringstream os;
  os << "metric,split,source_domain,target_domain,mode,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.12g", r.value);
    os << r.metric << ',' << r.split << ',' << r.source_domain << ',' << r.target_domain << ',' << to_string(mode)
       << ',' << buf << '\n';
  }
  return os.str();
}

std::vector<std::vector<Tensor<float>>> eval_sources(const std::vector<SynthSample>& samples, int num_domains) {
  std::vector<std::vector<Tensor<float>>> out(static_cast<std::size_t>(num_domains));
  for (bool test : {true, false}) {
    for (const auto& s : samples) {
      if (s.train == test || s.domain < 0 || s.domain >= num_domains) continue;
      out[static_cast<std::size_t>(s.domain)].push_back(s.image);
    }
  }
  return out;
}

MetricsReport evaluate(const TranslationModel<float>& model, const std::vector<SynthSample>& samples,
                       const EvalConfig& config, std::vector<Tensor<float>>* grids) {
  const int D = model.config().num_domains;
  if (config.diversity_sources < 1) throw std::invalid_argument("diversity_sources must be >= 1");
  const auto by_domain = eval_sources(samples, D);
  for (int d = 0; d < D; ++d) {
    if (static_cast<Index>(by_domain[d].size()) < std::max(kControllabilitySources, config.diversity_sources)) {
      throw std::invalid_argument("evaluation needs at least " + std::to_string(kControllabilitySources) +
                                  " images of domain " + std::to_string(d));
    }
  }
  const ProxyFeatureNet net(config.feature_seed);
  const StyleSampler sampler =
      config.mode == GuidanceMode::latent ? latent_sampler(model) : reference_sampler(model, by_domain);
  std::mt19937_64 rng(mix_seed(config.seed));
  MetricsReport report;
  report.mode = config.mode;
  int cross = 0;
  for (int s = 0; s < D; ++s) {
    const std::vector<Tensor<float>> div_src(by_domain[s].begin(), by_domain[s].begin() + config.diversity_sources);
    const std::vector<Tensor<float>> ctl_src(by_domain[s].begin(), by_domain[s].begin() + kControllabilitySources);
    for (int t = 0; t < D; ++t) {
      const std::string split = s == t ? "internal" : "cross";
      // Diversity outputs are regenerated from a copy of the stream for fid_proxy and grids.
      std::mt19937_64 replay = rng;
      const double div = diversity(model, div_src, t, sampler, net, rng);
      const double ctl = controllability(model, ctl_src, t, sampler, net, rng);
      std::vector<Tensor<float>> fakes, cells;
      for (const auto& src : div_src) {
        std::vector<Tensor<float>> w;
        for (int k = 0; k < kDiversityCodes; ++k) w.push_back(sampler(t, replay));
        const Tensor<float> out = model.translate(repeat(src, kDiversityCodes), stack(w));
        for (Index k = 0; k < kDiversityCodes; ++k) fakes.push_back(slice_sample(out, k));
        cells.push_back(src);
        cells.insert(cells.end(), fakes.end() - kDiversityCodes, fakes.end());
      }
      if (grids) grids->push_back(tile_grid(stack(cells), kDiversityCodes + 1));
      const double fid = fid_proxy(fakes, by_domain[t], net);
      report.rows.push_back({"diversity", split, s, t, div});
      report.rows.push_back({"controllability", split, s, t, ctl});
      report.rows.push_back({"fid_proxy", split, s, t, fid});
      if (s != t) {
        report.diversity += div;
        report.controllability += ctl;
        report.fid_proxy += fid;
        ++cross;
      }
    }
  }
  if (cross > 0) {
    report.diversity /= cross;
    report.controllability /= cross;
    report.fid_proxy /= cross;
  }
  return report;
}

}  // namespace adarelu
