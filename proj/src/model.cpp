#include "adarelu/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace adarelu {

namespace {

constexpr double kTrunkSlope = 0.2;

enum class Init { he, fan_in, zero, constant, normal, struconv_identity };

struct ParamSpec {
  std::string name;
  std::vector<Index> dims;
  Init init = Init::zero;
  double value = 0.0;  // constant value or normal stddev
};

class LayoutBuilder {
 public:
  void conv(const std::string& name, Index out, Index in, Index k, bool bias = true) {
    specs.push_back({name + ".weight", {out, in, k, k}, Init::he});
    if (bias) specs.push_back({name + ".bias", {out}, Init::zero});
  }
  void linear(const std::string& name, Index out, Index in, Init init = Init::he) {
    specs.push_back({name + ".weight", {out, in}, init});
    specs.push_back({name + ".bias", {out}, Init::zero});
  }
  void add(ParamSpec spec) { specs.push_back(std::move(spec)); }

  std::vector<ParamSpec> specs;
};

std::vector<ParamSpec> build_layout(const ArchConfig& cfg) {
  cfg.validate();
  LayoutBuilder L;
  const Index dim = cfg.style_dim;

  L.conv("gen.from_rgb", cfg.channels_at(0), 3, 3);
  for (int k = 0; k < cfg.down_blocks; ++k) {
    const Index cin = cfg.channels_at(k), cout = cfg.channels_at(k + 1);
    const std::string p = "gen.enc." + std::to_string(k);
    L.conv(p + ".conv1", cin, cin, 3);
    L.conv(p + ".conv2", cout, cin, 3);
    if (cin != cout) L.conv(p + ".shortcut", cout, cin, 1);
  }
  const Index C = cfg.translator_channels();
  for (int b = 0; b < cfg.translator_blocks; ++b) {
    const std::string p = "gen.trans." + std::to_string(b);
    if (cfg.adain_mode == AdainMode::adain) {
      L.add({p + ".adain.weight", {2 * C, dim}, Init::normal, 1.0 / std::sqrt(static_cast<double>(dim))});
      ParamSpec bias{p + ".adain.bias", {2 * C}, Init::constant, 0.0};
      L.add(bias);  // mu half 0, sigma half set to 1 in initialize()
    }
    switch (rectifier_of(cfg.activation)) {
      case ActivationKind::prelu: L.add({p + ".act.slopes", {C}, Init::constant, 0.25}); break;
      case ActivationKind::adarelu:
        L.add({p + ".act.affine.weight", {C, dim}, Init::normal, 0.01});
        L.add({p + ".act.affine.bias", {C}, Init::constant, 0.2});
        break;
      default: break;
    }
    if (is_structural(cfg.activation)) L.add({p + ".act.kernels", {C, 1, 3, 3}, Init::struconv_identity});
    L.conv(p + ".conv", C, C, 3);
  }
  for (int k = cfg.down_blocks - 1; k >= 0; --k) {
    const Index cin = cfg.channels_at(k + 1), cout = cfg.channels_at(k);
    const std::string p = "gen.dec." + std::to_string(k);
    L.conv(p + ".conv1", cout, cin, 3);
    L.conv(p + ".conv2", cout, cout, 3);
    if (cin != cout) L.conv(p + ".shortcut", cout, cin, 1);
  }
  L.conv("gen.to_rgb", 3, cfg.channels_at(0), 1);

  const Index H = cfg.mapping_hidden;
  L.linear("map.shared.0", H, cfg.latent_dim);
  L.linear("map.shared.1", H, H);
  for (int d = 0; d < cfg.num_domains; ++d) {
    const std::string p = "map.head." + std::to_string(d);
    L.linear(p + ".0", H, H);
    L.linear(p + ".1", dim, H, Init::fan_in);
  }

  auto critic = [&](const std::string& prefix) {
    const int stages = cfg.critic_stages();
    auto ch = [&](int s) { return static_cast<Index>(std::min(cfg.base_channels << s, 8 * cfg.base_channels)); };
    L.conv(prefix + "from_rgb", ch(0), 3, 3);
    for (int s = 0; s < stages; ++s) L.conv(prefix + "block." + std::to_string(s), ch(s + 1), ch(s), 3);
    return ch(stages);
  };
  const Index style_feat = critic(kStyleEncoderPrefix);
  for (int d = 0; d < cfg.num_domains; ++d) {
    L.linear(kStyleEncoderPrefix + "head." + std::to_string(d), dim, style_feat, Init::fan_in);
  }
  const Index dis_feat = critic(kDiscriminatorPrefix);
  L.linear(kDiscriminatorPrefix + "head", cfg.num_domains, dis_feat, Init::fan_in);
  return L.specs;
}

template <typename Scalar>
Tensor<Scalar> initial_value(const ParamSpec& spec, Index style_channels, std::mt19937_64& rng) {
  const Shape s = shape_from_dims(spec.dims);
  const Index fan_in = s.size() / s.n;
  switch (spec.init) {
    case Init::he: return randn<Scalar>(s, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
    case Init::fan_in: return randn<Scalar>(s, rng, std::sqrt(1.0 / static_cast<double>(fan_in)));
    case Init::normal: return randn<Scalar>(s, rng, spec.value);
    case Init::constant: {
      Tensor<Scalar> t = Tensor<Scalar>::constant(s, static_cast<Scalar>(spec.value));
      // AdaIN bias: mu half 0, sigma half 1.
      if (spec.name.size() >= 11 && spec.name.compare(spec.name.size() - 11, 11, ".adain.bias") == 0) {
        t.array().tail(style_channels).setOnes();
      }
      return t;
    }
    case Init::struconv_identity: {
      // Centre 0.9, others N(0, 0.05), then unit-normalized.
      Tensor<Scalar> t = randn<Scalar>(s, rng, 0.05);
      for (Index c = 0; c < s.n; ++c) t(c, 0, s.h / 2, s.w / 2) = Scalar(0.9);
      return normalize_kernels(StruConvKernelBank<Scalar>{t}).raw;
    }
    case Init::zero: break;
  }
  return Tensor<Scalar>(s);
}

std::string block_name(const std::string& prefix, int index) { return prefix + std::to_string(index); }

}  // namespace

std::string to_string(AdainMode mode) { return mode == AdainMode::adain ? "adain" : "in_only"; }

AdainMode parse_adain_mode(const std::string& name) {
  if (name == "adain") return AdainMode::adain;
  if (name == "in_only") return AdainMode::in_only;
  throw std::invalid_argument("unknown adain_mode '" + name + "'");
}

void ArchConfig::validate() const {
  if (image_size < 8 || base_channels < 1 || down_blocks < 1 || translator_blocks < 1 || style_dim < 1 ||
      latent_dim < 1 || num_domains < 1 || mapping_hidden < 1) {
    throw std::invalid_argument("invalid architecture: all sizes must be >= 1 and image_size >= 8");
  }
  if (image_size % (1 << down_blocks) != 0) {
    throw std::invalid_argument("invalid architecture: image_size " + std::to_string(image_size) +
                                " not divisible by 2^down_blocks");
  }
  if (image_size % 4 != 0) throw std::invalid_argument("invalid architecture: image_size must be a multiple of 4");
}

int ArchConfig::channels_at(int level) const { return std::min(base_channels << level, 8 * base_channels); }

int ArchConfig::critic_stages() const {
  int stages = 0;
  for (int s = image_size; s > 4 && s % 2 == 0; s /= 2) ++stages;
  return stages;
}

double ParameterReport::structural_overhead_percent() const {
  const Index without = translator - translator_structural;
  return without > 0 ? 100.0 * static_cast<double>(translator_structural) / static_cast<double>(without) : 0.0;
}

std::string ParameterReport::str() const {
  std::ostringstream os;
  os << "generator=" << generator << " translator=" << translator << " translator_structural="
     << translator_structural << " mapping=" << mapping << " style_encoder=" << style_encoder
     << " discriminator=" << discriminator << " structural_overhead_percent=" << structural_overhead_percent();
  return os.str();
}

std::vector<std::pair<std::string, std::vector<Index>>> parameter_layout(const ArchConfig& config) {
  std::vector<std::pair<std::string, std::vector<Index>>> out;
  for (const auto& s : build_layout(config)) out.emplace_back(s.name, s.dims);
  return out;
}

template <typename Scalar>
TranslationModel<Scalar>::TranslationModel(ArchConfig config, ParameterStore<Scalar> params)
    : config_(config), params_(std::move(params)) {
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw std::invalid_argument("parameter set does not match architecture: expected " +
                                std::to_string(layout.size()) + " arrays, got " + std::to_string(params_.size()));
  }
  for (const auto& [name, dims] : layout) {
    const auto& p = params_[params_.index_of(name)];
    if (p.dims != dims) throw std::invalid_argument("parameter '" + name + "' has the wrong shape");
  }
}

template <typename Scalar>
TranslationModel<Scalar> TranslationModel<Scalar>::initialize(const ArchConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterStore<Scalar> store;
  const Index C = config.translator_channels();
  for (const auto& spec : build_layout(config)) {
    store.add(spec.name, spec.dims, initial_value<Scalar>(spec, C, rng));
  }
  return TranslationModel(config, std::move(store));
}

template <typename Scalar>
void TranslationModel<Scalar>::check_domains(const std::vector<int>& domains, Index batch) const {
  if (static_cast<Index>(domains.size()) != batch) throw std::invalid_argument("domain list length mismatch");
  for (int d : domains) {
    if (d < 0 || d >= config_.num_domains) throw std::out_of_range("domain " + std::to_string(d) + " out of range");
  }
}

template <typename Scalar>
void TranslationModel<Scalar>::check_image(const Shape& s) const {
  if (s.c != 3 || s.h != config_.image_size || s.w != config_.image_size) {
    throw std::invalid_argument("image shape " + s.str() + " does not match architecture (N, 3, " +
                                std::to_string(config_.image_size) + ", " + std::to_string(config_.image_size) + ")");
  }
}

namespace {

template <typename Scalar>
Var conv(ParamBinder<Scalar>& b, const std::string& name, Var x) {
  const Var w = b(name + ".weight");
  const int k = static_cast<int>(b.tape().value(w).shape().h);
  return ops::conv2d(b.tape(), x, w, b(name + ".bias"), {1, k / 2});
}

template <typename Scalar>
Var lrelu(ParamBinder<Scalar>& b, Var x) {
  return ops::leaky_relu(b.tape(), x, static_cast<Scalar>(kTrunkSlope));
}

}  // namespace

template <typename Scalar>
Var TranslationModel<Scalar>::generate(ParamBinder<Scalar>& b, Var image, Var style,
                                       TranslatorTrace<Scalar>* trace) const {
  Tape<Scalar>& t = b.tape();
  check_image(t.value(image).shape());
  const Index N = t.value(image).shape().n;
  if (t.value(style).shape() != Shape{N, config_.style_dim, 1, 1}) {
    throw std::invalid_argument("style code shape " + t.value(style).shape().str() + " does not match batch " +
                                std::to_string(N) + " and style_dim " + std::to_string(config_.style_dim));
  }
  const Scalar inv_sqrt2 = static_cast<Scalar>(1.0 / std::sqrt(2.0));

  Var h = conv(b, "gen.from_rgb", image);
  for (int k = 0; k < config_.down_blocks; ++k) {
    const std::string p = block_name("gen.enc.", k);
    Var r = ops::instance_norm(t, h);
    r = conv(b, p + ".conv1", lrelu(b, r));
    r = ops::avg_pool2(t, r);
    r = ops::instance_norm(t, r);
    r = conv(b, p + ".conv2", lrelu(b, r));
    Var s = params_.contains(p + ".shortcut.weight") ? conv(b, p + ".shortcut", h) : h;
    s = ops::avg_pool2(t, s);
    h = ops::scale(t, ops::add(t, r, s), inv_sqrt2);
  }

  const Index C = config_.translator_channels();
  const ActivationKind rect = rectifier_of(config_.activation);
  for (int blk = 0; blk < config_.translator_blocks; ++blk) {
    const std::string p = block_name("gen.trans.", blk);
    if (config_.adain_mode == AdainMode::adain) {
      Var mod = ops::linear(t, style, b(p + ".adain.weight"), b(p + ".adain.bias"));
      h = ops::adain(t, h, ops::slice_channels(t, mod, 0, C), ops::slice_channels(t, mod, C, C));
    } else {
      h = ops::instance_norm(t, h);
    }
    if (is_structural(config_.activation)) h = ops::struconv(t, h, b(p + ".act.kernels"), config_.structural);
    Var slopes;
    switch (rect) {
      case ActivationKind::relu: slopes = t.constant(Tensor<Scalar>({N, C, 1, 1})); break;
      case ActivationKind::leaky_relu:
        slopes = t.constant(Tensor<Scalar>::constant({N, C, 1, 1}, static_cast<Scalar>(config_.fixed_slope)));
        break;
      case ActivationKind::prelu: slopes = ops::broadcast_batch(t, b(p + ".act.slopes"), N); break;
      default: slopes = ops::linear(t, style, b(p + ".act.affine.weight"), b(p + ".act.affine.bias")); break;
    }
    if (trace) {
      trace->rectifier_inputs.push_back(t.value(h));
      trace->slopes.push_back(t.value(slopes));
    }
    h = ops::rectify(t, h, slopes);
    h = conv(b, p + ".conv", h);
  }

  for (int k = config_.down_blocks - 1; k >= 0; --k) {
    const std::string p = block_name("gen.dec.", k);
    Var r = ops::upsample_nearest2(t, lrelu(b, h));
    r = conv(b, p + ".conv1", r);
    r = conv(b, p + ".conv2", lrelu(b, r));
    Var s = ops::upsample_nearest2(t, h);
    if (params_.contains(p + ".shortcut.weight")) s = conv(b, p + ".shortcut", s);
    h = ops::scale(t, ops::add(t, r, s), inv_sqrt2);
  }
  return ops::tanh(t, conv(b, "gen.to_rgb", lrelu(b, h)));
}

template <typename Scalar>
Var TranslationModel<Scalar>::map_latent(ParamBinder<Scalar>& b, Var z, const std::vector<int>& domains) const {
  Tape<Scalar>& t = b.tape();
  const Shape& zs = t.value(z).shape();
  if (zs.c * zs.plane() != config_.latent_dim) throw std::invalid_argument("latent code dimension mismatch");
  check_domains(domains, zs.n);
  auto relu = [&](Var x) { return ops::leaky_relu(t, x, Scalar(0)); };
  Var h = relu(ops::linear(t, z, b("map.shared.0.weight"), b("map.shared.0.bias")));
  h = relu(ops::linear(t, h, b("map.shared.1.weight"), b("map.shared.1.bias")));
  std::vector<Var> heads;
  for (int d = 0; d < config_.num_domains; ++d) {
    const std::string p = block_name("map.head.", d);
    Var o = relu(ops::linear(t, h, b(p + ".0.weight"), b(p + ".0.bias")));
    heads.push_back(ops::linear(t, o, b(p + ".1.weight"), b(p + ".1.bias")));
  }
  return ops::select_heads(t, heads, domains);
}

template <typename Scalar>
Var TranslationModel<Scalar>::critic_trunk(ParamBinder<Scalar>& b, const std::string& prefix, Var image) const {
  Tape<Scalar>& t = b.tape();
  Var h = conv(b, prefix + "from_rgb", image);
  for (int s = 0; s < config_.critic_stages(); ++s) {
    h = ops::avg_pool2(t, conv(b, prefix + block_name("block.", s), lrelu(b, h)));
  }
  return ops::global_avg_pool(t, lrelu(b, h));
}

template <typename Scalar>
Var TranslationModel<Scalar>::encode_style(ParamBinder<Scalar>& b, Var image, const std::vector<int>& domains) const {
  Tape<Scalar>& t = b.tape();
  check_image(t.value(image).shape());
  check_domains(domains, t.value(image).shape().n);
  Var feat = critic_trunk(b, kStyleEncoderPrefix, image);
  std::vector<Var> heads;
  for (int d = 0; d < config_.num_domains; ++d) {
    const std::string p = kStyleEncoderPrefix + block_name("head.", d);
    heads.push_back(ops::linear(t, feat, b(p + ".weight"), b(p + ".bias")));
  }
  return ops::select_heads(t, heads, domains);
}

template <typename Scalar>
Var TranslationModel<Scalar>::discriminate(ParamBinder<Scalar>& b, Var image, const std::vector<int>& domains) const {
  Tape<Scalar>& t = b.tape();
  check_image(t.value(image).shape());
  check_domains(domains, t.value(image).shape().n);
  Var feat = critic_trunk(b, kDiscriminatorPrefix, image);
  Var logits = ops::linear(t, feat, b(kDiscriminatorPrefix + "head.weight"), b(kDiscriminatorPrefix + "head.bias"));
  std::vector<Var> heads;
  for (int d = 0; d < config_.num_domains; ++d) heads.push_back(ops::slice_channels(t, logits, d, 1));
  return ops::select_heads(t, heads, domains);
}

template <typename Scalar>
Tensor<Scalar> TranslationModel<Scalar>::translate(const Tensor<Scalar>& source, const Tensor<Scalar>& w,
                                                   TranslatorTrace<Scalar>* trace) const {
  Tape<Scalar> tape;
  ParamBinder<Scalar> b(tape, params_);
  return tape.value(generate(b, tape.constant(source), tape.constant(w), trace));
}

template <typename Scalar>
Tensor<Scalar> TranslationModel<Scalar>::map_latent(const Tensor<Scalar>& z, const std::vector<int>& domains) const {
  Tape<Scalar> tape;
  ParamBinder<Scalar> b(tape, params_);
  return tape.value(map_latent(b, tape.constant(z), domains));
}

template <typename Scalar>
Tensor<Scalar> TranslationModel<Scalar>::map_latent(const Tensor<Scalar>& z, int domain) const {
  return map_latent(z, std::vector<int>(static_cast<std::size_t>(z.shape().n), domain));
}

template <typename Scalar>
Tensor<Scalar> TranslationModel<Scalar>::encode_style(const Tensor<Scalar>& image,
                                                      const std::vector<int>& domains) const {
  Tape<Scalar> tape;
  ParamBinder<Scalar> b(tape, params_);
  return tape.value(encode_style(b, tape.constant(image), domains));
}

template <typename Scalar>
Tensor<Scalar> TranslationModel<Scalar>::encode_style(const Tensor<Scalar>& image, int domain) const {
  return encode_style(image, std::vector<int>(static_cast<std::size_t>(image.shape().n), domain));
}

template <typename Scalar>
Tensor<Scalar> TranslationModel<Scalar>::discriminate(const Tensor<Scalar>& image, int domain) const {
  Tape<Scalar> tape;
  ParamBinder<Scalar> b(tape, params_);
  std::vector<int> domains(static_cast<std::size_t>(image.shape().n), domain);
  return tape.value(discriminate(b, tape.constant(image), domains));
}

template <typename Scalar>
ActivationConfig<Scalar> TranslationModel<Scalar>::activation_site(int block) const {
  if (block < 0 || block >= config_.translator_blocks) throw std::out_of_range("translator block out of range");
  const std::string p = block_name("gen.trans.", block);
  const Index C = config_.translator_channels();
  ActivationConfig<Scalar> cfg;
  cfg.kind = config_.activation;
  cfg.fixed_slope = static_cast<Scalar>(config_.fixed_slope);
  cfg.structural_mode = config_.structural;
  switch (rectifier_of(cfg.kind)) {
    case ActivationKind::prelu:
      cfg.learned_slopes = Eigen::Map<const Vector<Scalar>>(params_.at(p + ".act.slopes").data(), C);
      break;
    case ActivationKind::adarelu: {
      AffineMap<Scalar> map;
      map.weight = Eigen::Map<const MatrixRM<Scalar>>(params_.at(p + ".act.affine.weight").data(), C,
                                                      config_.style_dim);
      map.bias = Eigen::Map<const Vector<Scalar>>(params_.at(p + ".act.affine.bias").data(), C);
      map.target = AffineTarget::slopes;
      cfg.slope_affine = std::move(map);
      break;
    }
    default: break;
  }
  if (is_structural(cfg.kind)) cfg.structural = StruConvKernelBank<Scalar>{params_.at(p + ".act.kernels")};
  cfg.validate(C);
  return cfg;
}

template <typename Scalar>
ParameterReport TranslationModel<Scalar>::parameter_report() const {
  ParameterReport r;
  r.generator = params_.count(kGeneratorPrefix);
  r.translator = params_.count(kTranslatorPrefix);
  for (const auto& p : params_) {
    if (p.name.rfind(kTranslatorPrefix, 0) == 0 && p.name.size() > 12 &&
        p.name.compare(p.name.size() - 12, 12, ".act.kernels") == 0) {
      r.translator_structural += p.value.size();
    }
  }
  r.mapping = params_.count(kMappingPrefix);
  r.style_encoder = params_.count(kStyleEncoderPrefix);
  r.discriminator = params_.count(kDiscriminatorPrefix);
  return r;
}

template class TranslationModel<float>;
template class TranslationModel<double>;

}  // namespace adarelu
