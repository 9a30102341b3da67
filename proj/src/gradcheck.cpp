#include "adarelu/gradcheck.hpp"

#include "adarelu/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace adarelu {

Tensor<double> finite_diff_jvp(const TensorFn& f, const Tensor<double>& x, const Tensor<double>& direction, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_jvp: step must be positive");
  require_same_shape(x.shape(), direction.shape(), "finite_diff_jvp direction");
  const Tensor<double> plus = f(Tensor<double>(x.shape(), x.array() + h * direction.array()));
  const Tensor<double> minus = f(Tensor<double>(x.shape(), x.array() - h * direction.array()));
  if (!plus.all_finite() || !minus.all_finite()) throw std::domain_error("finite_diff_jvp: non-finite function value");
  require_same_shape(plus.shape(), minus.shape(), "finite_diff_jvp outputs");
  return Tensor<double>(plus.shape(), (plus.array() - minus.array()) / (2.0 * h));
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
  return std::abs(analytic - numeric) / denom;
}

std::string GradCheckReport::str() const {
  std::ostringstream os;
  os << "op=" << op_name << " probes=" << probes << " excluded=" << excluded << " max_rel_error=" << max_rel_error
     << " worst=" << (worst_input.empty() ? "-" : worst_input) << "#" << worst_coordinate << " threshold=" << threshold
     << (passed ? " PASS" : " FAIL");
  return os.str();
}

namespace {

struct Evaluation {
  Tensor<double> output;
  std::vector<Tensor<double>> kinks;
};

Evaluation evaluate(const GradCase& gc, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.constant(x));
  Evaluation e{tape.value(gc.build(tape, leaves)), {}};
  for (Var k : tape.kinks()) e.kinks.push_back(tape.value(k));
  return e;
}

/// True when a rectifier input within the margin of zero moves under the probe.
bool touches_kink(const Evaluation& base, const Evaluation& plus, const Evaluation& minus) {
  for (std::size_t k = 0; k < base.kinks.size(); ++k) {
    const auto& v0 = base.kinks[k].array();
    const auto& vp = plus.kinks[k].array();
    const auto& vm = minus.kinks[k].array();
    for (Index i = 0; i < v0.size(); ++i) {
      if (std::abs(v0[i]) < kKinkMargin && (vp[i] != v0[i] || vm[i] != v0[i])) return true;
    }
  }
  return false;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) { return (a.array() * b.array()).sum(); }

}  // namespace

GradCheckReport check_case(const std::string& name, const GradCase& gc, std::mt19937_64& rng, double threshold,
                           int directions) {
  if (directions < 1) throw std::invalid_argument("check_case: directions must be >= 1");
  constexpr int kAttempts = 16;
  GradCheckReport report;
  report.op_name = name;
  report.threshold = threshold;

  Tape<double> tape;
  std::vector<Var> leaves;
  for (const auto& x : gc.inputs) leaves.push_back(tape.variable(x));
  const Var out = gc.build(tape, leaves);
  // Cotangent entries are bounded away from zero so a scalar output cannot shrink the probe into roundoff.
  Tensor<double> cotangent = rand_uniform<double>(tape.value(out).shape(), rng, 0.5, 1.5);
  std::bernoulli_distribution flip(0.5);
  for (Index k = 0; k < cotangent.size(); ++k) {
    if (flip(rng)) cotangent[k] = -cotangent[k];
  }
  tape.backward(out, cotangent);

  const Evaluation base = evaluate(gc, gc.inputs);
  Index probe_index = 0;
  for (std::size_t i = 0; i < gc.inputs.size(); ++i) {
    const Tensor<double> grad = tape.grad(leaves[i]);
    // Directions mix a random unit vector with the analytic gradient direction so the projected
    // derivative stays well above roundoff; an error in either component still shows up.
    const double grad_norm = grad.array().matrix().norm();
    for (int d = 0; d < directions; ++d, ++probe_index) {
      for (int attempt = 0; attempt < kAttempts; ++attempt) {
        Tensor<double> dir = randn<double>(gc.inputs[i].shape(), rng);
        dir.array() /= dir.array().matrix().norm();
        if (grad_norm > 0.0) {
          Tensor<double> mixed(dir.shape(), dir.array() + grad.array() / grad_norm);
          // In one dimension the two unit vectors can cancel; keep the random one then.
          const double mixed_norm = mixed.array().matrix().norm();
          if (mixed_norm > 1e-3) dir = Tensor<double>(dir.shape(), mixed.array() / mixed_norm);
        }
        std::vector<Tensor<double>> shifted = gc.inputs;
        shifted[i] = Tensor<double>(dir.shape(), gc.inputs[i].array() + kProbeStep * dir.array());
        const Evaluation plus = evaluate(gc, shifted);
        shifted[i] = Tensor<double>(dir.shape(), gc.inputs[i].array() - kProbeStep * dir.array());
        const Evaluation minus = evaluate(gc, shifted);
        if (touches_kink(base, plus, minus)) {
          ++report.excluded;
          continue;
        }
        if (!plus.output.all_finite() || !minus.output.all_finite()) {
          throw std::domain_error("gradcheck " + name + ": non-finite function value");
        }
        const double numeric =
            (dot(cotangent, plus.output) - dot(cotangent, minus.output)) / (2.0 * kProbeStep);
        const double err = relative_error(dot(grad, dir), numeric);
        ++report.probes;
        if (report.worst_coordinate < 0 || err > report.max_rel_error) {
          report.max_rel_error = err;
          report.worst_coordinate = probe_index;
          report.worst_input = gc.names[i];
        }
        break;
      }
    }
  }
  if (report.probes == 0) report.max_rel_error = std::numeric_limits<double>::infinity();
  report.passed = report.max_rel_error <= threshold;
  return report;
}

namespace {

using CaseFactory = std::function<GradCase(std::mt19937_64&)>;

Tensor<double> normal(std::mt19937_64& rng, Shape s, double stddev = 1.0, double mean = 0.0) {
  return randn<double>(s, rng, stddev, mean);
}

GradCase rectifier_case(ActivationKind kind, std::mt19937_64& rng) {
  const Index N = 2, C = 3, H = 4, W = 5, dim = 4;
  const bool structural = is_structural(kind);
  const ActivationKind rect = rectifier_of(kind);
  GradCase gc;
  gc.names = {"x"};
  gc.inputs = {normal(rng, {N, C, H, W})};
  if (kind == ActivationKind::sa_adarelu) {
    gc.names.insert(gc.names.end(), {"mu", "sigma"});
    gc.inputs.push_back(normal(rng, {N, C, 1, 1}, 0.5));
    gc.inputs.push_back(normal(rng, {N, C, 1, 1}, 0.5, 1.0));
  }
  if (structural) {
    gc.names.push_back("kernels");
    gc.inputs.push_back(normal(rng, {C, 1, 3, 3}));
  }
  if (rect == ActivationKind::prelu) {
    gc.names.push_back("slopes");
    gc.inputs.push_back(normal(rng, {C, 1, 1, 1}, 0.3, 0.25));
  }
  if (rect == ActivationKind::adarelu) {
    gc.names.insert(gc.names.end(), {"w", "affine.weight", "affine.bias"});
    gc.inputs.push_back(normal(rng, {N, dim, 1, 1}));
    gc.inputs.push_back(normal(rng, {C, dim, 1, 1}, 0.3));
    gc.inputs.push_back(normal(rng, {C, 1, 1, 1}, 0.3, 0.2));
  }
  const double fixed = rect == ActivationKind::leaky_relu ? 0.2 : 0.0;
  gc.build = [=, names = gc.names](Tape<double>& t, const std::vector<Var>& v) {
    auto find = [&](const std::string& n) { return v[std::find(names.begin(), names.end(), n) - names.begin()]; };
    Var x = v[0];
    if (kind == ActivationKind::sa_adarelu) x = ops::adain(t, x, find("mu"), find("sigma"));
    if (structural) x = ops::struconv(t, x, find("kernels"), StructuralMode::struconv);
    Var slopes;
    if (rect == ActivationKind::prelu) {
      slopes = ops::broadcast_batch(t, find("slopes"), N);
    } else if (rect == ActivationKind::adarelu) {
      slopes = ops::linear(t, find("w"), find("affine.weight"), find("affine.bias"));
    } else {
      slopes = t.constant(Tensor<double>::constant({N, C, 1, 1}, fixed));
    }
    return ops::rectify(t, x, slopes);
  };
  return gc;
}

ArchConfig tiny_arch(ActivationKind kind) {
  ArchConfig a;
  a.image_size = 8;
  a.base_channels = 2;
  a.down_blocks = 1;
  a.translator_blocks = 2;
  a.style_dim = 3;
  a.latent_dim = 2;
  a.num_domains = 2;
  a.mapping_hidden = 4;
  a.activation = kind;
  return a;
}

/// Biases whose every consumer is an instance normalization. Their exact gradient is zero, so a
/// finite difference on them measures roundoff only.
bool feeds_normalization(const ArchConfig& arch, const std::string& name) {
  if (name == "gen.from_rgb.bias") return true;
  if (name.rfind("gen.enc.", 0) == 0 && name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0) return true;
  for (int b = 0; b + 1 < arch.translator_blocks; ++b) {
    if (name == "gen.trans." + std::to_string(b) + ".conv.bias") return true;
  }
  return false;
}

/// Whole-network case: the image (or latent) plus every parameter under `prefix` are inputs.
GradCase network_case(const std::string& which, std::mt19937_64& rng) {
  const ArchConfig arch = tiny_arch(ActivationKind::sa_adarelu);
  auto model = std::make_shared<TranslationModel<double>>(TranslationModel<double>::initialize(arch, rng()));
  const Index N = 2;
  const std::vector<int> domains = {0, 1};
  std::string prefix;
  GradCase gc;
  if (which == "mapping_network") {
    prefix = kMappingPrefix;
    gc.names.push_back("z");
    gc.inputs.push_back(normal(rng, {N, arch.latent_dim, 1, 1}));
  } else {
    gc.names.push_back("image");
    gc.inputs.push_back(rand_uniform<double>({N, 3, arch.image_size, arch.image_size}, rng, -1.0, 1.0));
    if (which == "generator") {
      prefix = kGeneratorPrefix;
      gc.names.push_back("style");
      gc.inputs.push_back(normal(rng, {N, arch.style_dim, 1, 1}));
    } else {
      prefix = which == "style_encoder" ? kStyleEncoderPrefix : kDiscriminatorPrefix;
    }
  }
  const std::size_t fixed_inputs = gc.inputs.size();
  for (const auto& p : model->params()) {
    if (p.name.rfind(prefix, 0) != 0 || feeds_normalization(arch, p.name)) continue;
    gc.names.push_back(p.name);
    // Perturb biases away from zero so their gradients are exercised off the init point.
    gc.inputs.push_back(Tensor<double>(p.value.shape(), p.value.array() + 0.1 * normal(rng, p.value.shape()).array()));
  }
  gc.build = [=, names = gc.names](Tape<double>& t, const std::vector<Var>& v) {
    ParamBinder<double> b(t, model->params());
    for (std::size_t i = fixed_inputs; i < v.size(); ++i) b.bind(names[i], v[i]);
    if (which == "mapping_network") return model->map_latent(b, v[0], domains);
    if (which == "generator") return model->generate(b, v[0], v[1]);
    if (which == "style_encoder") return model->encode_style(b, v[0], domains);
    return model->discriminate(b, v[0], domains);
  };
  return gc;
}

GradCase unary_case(Shape s, std::function<Var(Tape<double>&, Var)> op, std::mt19937_64& rng) {
  return {{"x"}, {normal(rng, s)}, [op](Tape<double>& t, const std::vector<Var>& v) { return op(t, v[0]); }};
}

const std::map<std::string, CaseFactory>& registry() {
  static const std::map<std::string, CaseFactory> r = [] {
    std::map<std::string, CaseFactory> m;
    m["conv2d"] = [](std::mt19937_64& rng) {
      std::uniform_int_distribution<int> pick(0, 1);
      const Conv2dOptions opt{1 + pick(rng), pick(rng)};
      GradCase gc{{"x", "weight", "bias"},
                  {normal(rng, {2, 3, 6, 5}), normal(rng, {4, 3, 3, 3}, 0.5), normal(rng, {4, 1, 1, 1})},
                  nullptr};
      gc.build = [opt](Tape<double>& t, const std::vector<Var>& v) { return ops::conv2d(t, v[0], v[1], v[2], opt); };
      return gc;
    };
    m["instance_norm"] = [](std::mt19937_64& rng) {
      GradCase gc{{"x"}, {normal(rng, {2, 3, 4, 5}, 2.0, 0.5)}, nullptr};
      gc.build = [](Tape<double>& t, const std::vector<Var>& v) { return ops::instance_norm(t, v[0]); };
      return gc;
    };
    m["adain"] = [](std::mt19937_64& rng) {
      GradCase gc{{"x", "mu", "sigma"},
                  {normal(rng, {2, 3, 4, 5}, 2.0), normal(rng, {2, 3, 1, 1}), normal(rng, {2, 3, 1, 1}, 0.5, 1.0)},
                  nullptr};
      gc.build = [](Tape<double>& t, const std::vector<Var>& v) { return ops::adain(t, v[0], v[1], v[2]); };
      return gc;
    };
    m["affine_style"] = [](std::mt19937_64& rng) {
      GradCase gc{{"w", "weight", "bias"},
                  {normal(rng, {3, 5, 1, 1}), normal(rng, {8, 5, 1, 1}), normal(rng, {8, 1, 1, 1})},
                  nullptr};
      gc.build = [](Tape<double>& t, const std::vector<Var>& v) { return ops::linear(t, v[0], v[1], v[2]); };
      return gc;
    };
    m["linear"] = [](std::mt19937_64& rng) {
      GradCase gc{{"x", "weight", "bias"},
                  {normal(rng, {2, 3, 2, 2}), normal(rng, {5, 12, 1, 1}), normal(rng, {5, 1, 1, 1})},
                  nullptr};
      gc.build = [](Tape<double>& t, const std::vector<Var>& v) { return ops::linear(t, v[0], v[1], v[2]); };
      return gc;
    };
    for (ActivationKind k : {ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::prelu,
                             ActivationKind::adarelu, ActivationKind::sa_relu, ActivationKind::sa_leaky_relu,
                             ActivationKind::sa_prelu, ActivationKind::sa_adarelu}) {
      m[to_string(k)] = [k](std::mt19937_64& rng) { return rectifier_case(k, rng); };
    }
    for (StructuralMode mode : {StructuralMode::struconv, StructuralMode::dwconv}) {
      m[to_string(mode)] = [mode](std::mt19937_64& rng) {
        GradCase gc{{"x", "kernels"}, {normal(rng, {2, 3, 5, 4}), normal(rng, {3, 1, 3, 3})}, nullptr};
        gc.build = [mode](Tape<double>& t, const std::vector<Var>& v) { return ops::struconv(t, v[0], v[1], mode); };
        return gc;
      };
    }
    m["avg_pool2"] = [](std::mt19937_64& rng) {
      return unary_case({2, 3, 4, 6}, [](Tape<double>& t, Var x) { return ops::avg_pool2(t, x); }, rng);
    };
    m["upsample_nearest2"] = [](std::mt19937_64& rng) {
      return unary_case({2, 3, 3, 2}, [](Tape<double>& t, Var x) { return ops::upsample_nearest2(t, x); }, rng);
    };
    m["global_avg_pool"] = [](std::mt19937_64& rng) {
      return unary_case({2, 3, 3, 4}, [](Tape<double>& t, Var x) { return ops::global_avg_pool(t, x); }, rng);
    };
    m["tanh"] = [](std::mt19937_64& rng) {
      return unary_case({2, 3, 3, 3}, [](Tape<double>& t, Var x) { return ops::tanh(t, x); }, rng);
    };
    m["softplus"] = [](std::mt19937_64& rng) {
      return unary_case({6, 1, 1, 1}, [](Tape<double>& t, Var x) {
        return ops::add(t, ops::softplus_mean(t, x, 1.0), ops::softplus_mean(t, x, -1.0));
      }, rng);
    };
    m["l1_distance"] = [](std::mt19937_64& rng) {
      GradCase gc{{"a", "b"}, {normal(rng, {2, 3, 3, 3}), normal(rng, {2, 3, 3, 3})}, nullptr};
      gc.build = [](Tape<double>& t, const std::vector<Var>& v) { return ops::mean_abs_diff(t, v[0], v[1]); };
      return gc;
    };
    for (const char* net : {"discriminator", "style_encoder", "mapping_network", "generator"}) {
      m[net] = [net = std::string(net)](std::mt19937_64& rng) { return network_case(net, rng); };
    }
    return m;
  }();
  return r;
}

}  // namespace

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> names = {
      "conv2d",        "instance_norm", "adain",           "affine_style",  "linear",
      "relu",          "leaky_relu",    "prelu",           "adarelu",       "struconv",
      "dwconv",        "sa_relu",       "sa_leaky_relu",   "sa_prelu",      "sa_adarelu",
      "avg_pool2",     "upsample_nearest2", "global_avg_pool", "tanh",      "softplus",
      "l1_distance",   "discriminator", "style_encoder",   "mapping_network", "generator"};
  return names;
}

GradCase make_grad_case(const std::string& op, std::mt19937_64& rng) {
  auto it = registry().find(op);
  if (it == registry().end()) throw std::invalid_argument("unknown gradcheck op: " + op);
  return it->second(rng);
}

GradCheckReport check_layer(const std::string& op, int seeds, double threshold, std::uint64_t seed) {
  constexpr int kDirections = 3;
  if (seeds < 1) throw std::invalid_argument("check_layer: seeds must be >= 1");
  GradCheckReport total;
  total.op_name = op;
  total.threshold = threshold;
  Index offset = 0;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(mix_seed(seed ^ mix_seed(static_cast<std::uint64_t>(s) + 1)));
    const GradCase gc = make_grad_case(op, rng);
    const GradCheckReport r = check_case(op, gc, rng, threshold, kDirections);
    if (r.probes > 0 && (total.worst_coordinate < 0 || r.max_rel_error > total.max_rel_error)) {
      total.max_rel_error = r.max_rel_error;
      total.worst_coordinate = offset + r.worst_coordinate;
      total.worst_input = r.worst_input;
    }
    total.probes += r.probes;
    total.excluded += r.excluded;
    offset += static_cast<Index>(gc.inputs.size()) * kDirections;
  }
  if (total.probes == 0) total.max_rel_error = std::numeric_limits<double>::infinity();
  total.passed = total.max_rel_error <= threshold;
  return total;
}

}  // namespace adarelu
