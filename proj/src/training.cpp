#include "adarelu/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace adarelu {

double LossWeights::lambda_ds(Index iteration, Index total) const {
  const double span = static_cast<double>(std::max<Index>(total - 1, 1));
  const double t = std::clamp(static_cast<double>(iteration) / span, 0.0, 1.0);
  return ds_initial + (ds_final - ds_initial) * t;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

AdversarialLosses adversarial_losses(double d_real, double d_fake) {
  return {softplus(-d_real) + softplus(d_fake), softplus(-d_fake)};
}

namespace {

template <typename Scalar>
double mean_abs(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  require_same_shape(a.shape(), b.shape(), what);
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
  return (a.array().template cast<double>() - b.array().template cast<double>()).abs().mean();
}

}  // namespace

template <typename Scalar>
double style_reconstruction_loss(const Tensor<Scalar>& w, const Tensor<Scalar>& w_hat) {
  return mean_abs(w, w_hat, "style_reconstruction_loss");
}

template <typename Scalar>
double diversity_sensitive_loss(const Tensor<Scalar>& img1, const Tensor<Scalar>& img2) {
  return mean_abs(img1, img2, "diversity_sensitive_loss");
}

template <typename Scalar>
double cycle_loss(const Tensor<Scalar>& source, const Tensor<Scalar>& reconstructed) {
  return mean_abs(source, reconstructed, "cycle_loss");
}

template <typename Scalar>
R1Result<Scalar> r1_penalty(const TranslationModel<Scalar>& model, const Tensor<Scalar>& real,
                            const std::vector<int>& domains, double gamma, bool with_grads, double probe) {
  const Index N = real.shape().n;
  Tensor<Scalar> g;
  {
    Tape<Scalar> t;
    ParamBinder<Scalar> b(t, model.params());
    const Var x = t.variable(real);
    t.backward(model.discriminate(b, x, domains));
    g = t.grad(x);
  }
  R1Result<Scalar> r;
  r.value = 0.5 * gamma * g.array().template cast<double>().square().sum() / static_cast<double>(N);
  if (!with_grads) return r;
  r.grads.resize(model.params().size());
  const double gmax = static_cast<double>(g.array().abs().maxCoeff());
  if (gmax == 0.0) return r;
  const double e = probe / gmax;
  auto param_grads = [&](double sign) {
    Tape<Scalar> t;
    ParamBinder<Scalar> b(t, model.params(), name_has_prefix({kDiscriminatorPrefix}));
    const Var x = t.constant(Tensor<Scalar>(real.shape(), real.array() + static_cast<Scalar>(sign * e) * g.array()));
    t.backward(model.discriminate(b, x, domains));
    Gradients<Scalar> out;
    b.collect(out);
    return out;
  };
  const Gradients<Scalar> plus = param_grads(1.0);
  const Gradients<Scalar> minus = param_grads(-1.0);
  const auto coef = static_cast<Scalar>(gamma / static_cast<double>(N) / (2.0 * e));
  for (std::size_t i = 0; i < plus.size(); ++i) {
    if (plus[i].empty()) continue;
    r.grads[i] = Tensor<Scalar>(plus[i].shape(), coef * (plus[i].array() - minus[i].array()));
  }
  return r;
}

template <typename Scalar>
void adam_step(ParameterStore<Scalar>& params, const Gradients<Scalar>& grads, AdamState<Scalar>& state,
               const AdamConfig& cfg) {
  const std::size_t P = params.size();
  if (grads.size() > P) throw std::invalid_argument("adam_step: more gradients than parameters");
  state.m.resize(P);
  state.v.resize(P);
  state.steps.resize(P, 0);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].empty()) continue;
    Tensor<Scalar>& p = params[i].value;
    require_same_shape(grads[i].shape(), p.shape(), "adam_step '" + params[i].name + "'");
    if (state.m[i].empty()) {
      state.m[i] = Tensor<Scalar>(p.shape());
      state.v[i] = Tensor<Scalar>(p.shape());
    }
    const std::int64_t t = ++state.steps[i];
    const auto b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
    const auto& g = grads[i].array();
    state.m[i].array() = b1 * state.m[i].array() + (Scalar(1) - b1) * g;
    state.v[i].array() = b2 * state.v[i].array() + (Scalar(1) - b2) * g.square();
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
    p.array() -= static_cast<Scalar>(cfg.lr) * (state.m[i].array() / c1) /
                 ((state.v[i].array() / c2).sqrt() + static_cast<Scalar>(cfg.eps));
  }
}

void TrainConfig::validate() const {
  arch.validate();
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (!(adam.lr > 0) || !(adam.eps > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) ||
      !(adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw std::invalid_argument("invalid optimizer settings");
  }
  if (!(weights.r1_gamma >= 0)) throw std::invalid_argument("r1_gamma must be >= 0");
}

std::string LossRecord::csv_header() {
  return "iteration,lambda_ds,d_latent,d_r1_latent,d_ref,d_r1_ref,g_adv_latent,g_sty_latent,g_ds_latent,"
         "g_cyc_latent,g_total_latent,g_adv_ref,g_sty_ref,g_ds_ref,g_cyc_ref,g_total_ref";
}

std::string LossRecord::csv_row() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long>(iteration), lambda_ds, d_latent, d_r1_latent, d_ref, d_r1_ref, g_adv_latent,
                g_sty_latent, g_ds_latent, g_cyc_latent, g_total_latent, g_adv_ref, g_sty_ref, g_ds_ref, g_cyc_ref,
                g_total_ref);
  return buf;
}

bool LossRecord::all_finite() const {
  for (double v : {lambda_ds, d_latent, d_r1_latent, d_ref, d_r1_ref, g_adv_latent, g_sty_latent, g_ds_latent,
                   g_cyc_latent, g_total_latent, g_adv_ref, g_sty_ref, g_ds_ref, g_cyc_ref, g_total_ref}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

TrainData TrainData::from_samples(const std::vector<SynthSample>& samples, int num_domains) {
  TrainData data;
  data.by_domain.resize(static_cast<std::size_t>(num_domains));
  for (const auto& s : samples) {
    if (!s.train) continue;
    if (s.domain < 0 || s.domain >= num_domains) throw std::invalid_argument("sample domain out of range");
    data.by_domain[static_cast<std::size_t>(s.domain)].push_back(s.image);
  }
  for (int d = 0; d < num_domains; ++d) {
    if (data.by_domain[static_cast<std::size_t>(d)].empty()) {
      throw std::invalid_argument("empty dataset: no training images for domain " + std::to_string(d));
    }
  }
  return data;
}

TrainState init_train_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.rng_seed = config.seed;
  s.rng.seed(mix_seed(config.seed ^ 0x5eedULL));
  s.model = TranslationModel<float>::initialize(config.arch, mix_seed(config.seed));
  return s;
}

namespace {

struct Batch {
  Tensor<float> x_real, x_ref, x_ref2, z_trg, z_trg2;
  std::vector<int> y_org, y_trg;
};

Batch sample_batch(std::mt19937_64& rng, const TrainData& data, const TrainConfig& config) {
  const int D = config.arch.num_domains;
  std::uniform_int_distribution<int> domain(0, D - 1);
  auto pick = [&](int d) -> const Tensor<float>& {
    const auto& pool = data.by_domain[static_cast<std::size_t>(d)];
    std::uniform_int_distribution<std::size_t> idx(0, pool.size() - 1);
    return pool[idx(rng)];
  };
  Batch b;
  std::vector<Tensor<float>> real, ref, ref2;
  for (Index n = 0; n < config.batch; ++n) {
    b.y_org.push_back(domain(rng));
    real.push_back(pick(b.y_org.back()));
    b.y_trg.push_back(domain(rng));
    ref.push_back(pick(b.y_trg.back()));
    ref2.push_back(pick(b.y_trg.back()));
  }
  b.x_real = stack(real);
  b.x_ref = stack(ref);
  b.x_ref2 = stack(ref2);
  const Shape zs{config.batch, config.arch.latent_dim, 1, 1};
  b.z_trg = randn<float>(zs, rng);
  b.z_trg2 = randn<float>(zs, rng);
  return b;
}

void add_into(Gradients<float>& acc, const Gradients<float>& g) {
  acc.resize(std::max(acc.size(), g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i].empty()) continue;
    if (acc[i].empty()) {
      acc[i] = g[i];
    } else {
      acc[i].array() += g[i].array();
    }
  }
}

/// Discriminator update against fakes made with style codes `s_trg`. Returns (adversarial loss, R1).
std::pair<double, double> discriminator_step(TrainState& st, const Batch& b, const Tensor<float>& s_trg,
                                             const TrainConfig& cfg) {
  const TranslationModel<float>& model = st.model;
  const Tensor<float> x_fake = model.translate(b.x_real, s_trg);
  Tape<float> t;
  ParamBinder<float> bind(t, model.params(), name_has_prefix({kDiscriminatorPrefix}));
  const Var real_loss = ops::softplus_mean(t, model.discriminate(bind, t.constant(b.x_real), b.y_org), -1.0f);
  const Var fake_loss = ops::softplus_mean(t, model.discriminate(bind, t.constant(x_fake), b.y_trg), 1.0f);
  const Var loss = ops::weighted_sum(t, {{1.0f, real_loss}, {1.0f, fake_loss}});
  t.backward(loss);
  Gradients<float> grads;
  bind.collect(grads);
  const R1Result<float> r1 = r1_penalty(model, b.x_real, b.y_org, cfg.weights.r1_gamma, cfg.weights.r1_gamma > 0);
  add_into(grads, r1.grads);
  adam_step(st.model.params(), grads, st.adam, cfg.adam);
  return {static_cast<double>(t.value(loss)[0]), r1.value};
}

struct GeneratorTerms {
  double adv, sty, ds, cyc, total;
};

GeneratorTerms generator_step(TrainState& st, const Batch& b, bool latent, double lambda_ds, const TrainConfig& cfg) {
  const TranslationModel<float>& model = st.model;
  const LossWeights& w = cfg.weights;
  Tape<float> t;
  const auto trainable = latent ? name_has_prefix({kGeneratorPrefix, kMappingPrefix, kStyleEncoderPrefix})
                                : name_has_prefix({kGeneratorPrefix});
  ParamBinder<float> bind(t, model.params(), trainable);
  const Var x_real = t.constant(b.x_real);
  const Var s_trg = latent ? model.map_latent(bind, t.constant(b.z_trg), b.y_trg)
                           : model.encode_style(bind, t.constant(b.x_ref), b.y_trg);
  const Var x_fake = model.generate(bind, x_real, s_trg);
  const Var adv = ops::softplus_mean(t, model.discriminate(bind, x_fake, b.y_trg), -1.0f);
  const Var sty = ops::mean_abs_diff(t, model.encode_style(bind, x_fake, b.y_trg), s_trg);

  // The second output is a fixed target: no gradient flows through it.
  const Tensor<float> s_trg2 = latent ? model.map_latent(b.z_trg2, b.y_trg) : model.encode_style(b.x_ref2, b.y_trg);
  const Var ds = ops::mean_abs_diff(t, x_fake, t.constant(model.translate(b.x_real, s_trg2)));

  const Var s_org = model.encode_style(bind, x_real, b.y_org);
  const Var cyc = ops::mean_abs_diff(t, model.generate(bind, x_fake, s_org), x_real);
  const Var total = ops::weighted_sum(t, {{static_cast<float>(w.adv), adv},
                                          {static_cast<float>(w.sty), sty},
                                          {static_cast<float>(-lambda_ds), ds},
                                          {static_cast<float>(w.cyc), cyc}});
  t.backward(total);
  Gradients<float> grads;
  bind.collect(grads);
  adam_step(st.model.params(), grads, st.adam, cfg.adam);
  auto val = [&](Var v) { return static_cast<double>(t.value(v)[0]); };
  return {val(adv), val(sty), val(ds), val(cyc), val(total)};
}

}  // namespace

void train_step(TrainState& st, const TrainData& data, const TrainConfig& cfg) {
  if (static_cast<int>(data.by_domain.size()) != cfg.arch.num_domains) {
    throw std::invalid_argument("training data has the wrong number of domains");
  }
  for (std::size_t d = 0; d < data.by_domain.size(); ++d) {
    if (data.by_domain[d].empty()) throw std::invalid_argument("empty dataset: no images for domain " + std::to_string(d));
  }
  LossRecord& rec = st.last;
  rec = LossRecord{};
  rec.iteration = st.iteration;
  rec.lambda_ds = cfg.weights.lambda_ds(st.iteration, cfg.iterations);
  const Batch b = sample_batch(st.rng, data, cfg);

  std::tie(rec.d_latent, rec.d_r1_latent) = discriminator_step(st, b, st.model.map_latent(b.z_trg, b.y_trg), cfg);
  std::tie(rec.d_ref, rec.d_r1_ref) = discriminator_step(st, b, st.model.encode_style(b.x_ref, b.y_trg), cfg);

  GeneratorTerms g = generator_step(st, b, true, rec.lambda_ds, cfg);
  rec.g_adv_latent = g.adv;
  rec.g_sty_latent = g.sty;
  rec.g_ds_latent = g.ds;
  rec.g_cyc_latent = g.cyc;
  rec.g_total_latent = g.total;
  g = generator_step(st, b, false, rec.lambda_ds, cfg);
  rec.g_adv_ref = g.adv;
  rec.g_sty_ref = g.sty;
  rec.g_ds_ref = g.ds;
  rec.g_cyc_ref = g.cyc;
  rec.g_total_ref = g.total;
  ++st.iteration;
}

Checkpoint train_checkpoint(const TrainState& state) {
  Checkpoint c = model_checkpoint(state.model);
  c.arrays.push_back({"train.iteration", Precision::f64, {1}, {static_cast<double>(state.iteration)}});
  return c;
}

TrainState train(const TrainConfig& config, const TrainData& data, const TrainHooks& hooks) {
  TrainState st = init_train_state(config);
  for (Index it = 0; it < config.iterations; ++it) {
    train_step(st, data, config);
    if (!st.last.all_finite()) {
      throw std::runtime_error("non-finite loss at iteration " + std::to_string(it));
    }
    const bool last = it + 1 == config.iterations;
    if (hooks.on_log && (it % config.log_every == 0 || last)) hooks.on_log(st.last);
    if (hooks.on_checkpoint && (last || (config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0))) {
      hooks.on_checkpoint(st);
    }
  }
  return st;
}

TrainState train_to_directory(const TrainConfig& config, const TrainData& data, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "losses.csv");
  if (!csv) throw std::runtime_error("cannot write losses.csv in " + out_dir);
  csv << LossRecord::csv_header() << '\n';
  TrainHooks hooks;
  hooks.on_log = [&](const LossRecord& r) { csv << r.csv_row() << '\n' << std::flush; };
  hooks.on_checkpoint = [&](const TrainState& st) {
    const Checkpoint c = train_checkpoint(st);
    if (st.iteration == config.iterations) {
      save_checkpoint(c, (fs::path(out_dir) / "final.adrl").string());
    } else {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06ld.adrl", static_cast<long>(st.iteration));
      save_checkpoint(c, (fs::path(out_dir) / name).string());
    }
  };
  return train(config, data, hooks);
}

template double style_reconstruction_loss(const Tensor<float>&, const Tensor<float>&);
template double style_reconstruction_loss(const Tensor<double>&, const Tensor<double>&);
template double diversity_sensitive_loss(const Tensor<float>&, const Tensor<float>&);
template double diversity_sensitive_loss(const Tensor<double>&, const Tensor<double>&);
template double cycle_loss(const Tensor<float>&, const Tensor<float>&);
template double cycle_loss(const Tensor<double>&, const Tensor<double>&);
template R1Result<float> r1_penalty(const TranslationModel<float>&, const Tensor<float>&, const std::vector<int>&,
                                    double, bool, double);
template R1Result<double> r1_penalty(const TranslationModel<double>&, const Tensor<double>&, const std::vector<int>&,
                                     double, bool, double);
template void adam_step(ParameterStore<float>&, const Gradients<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step(ParameterStore<double>&, const Gradients<double>&, AdamState<double>&, const AdamConfig&);

}  // namespace adarelu
