#pragma once

#include "adarelu/checkpoint.hpp"
#include "adarelu/model.hpp"
#include "adarelu/synth.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace adarelu {

struct LossWeights {
  double adv = 1.0;
  double sty = 1.0;
  double ds_initial = 2.0;
  double ds_final = 0.8;
  double cyc = 1.0;
  double r1_gamma = 1.0;

  /// Linear from ds_initial at iteration 0 to ds_final at iteration total - 1, clamped after.
  double lambda_ds(Index iteration, Index total) const;
};

double softplus(double x);

struct AdversarialLosses {
  double d = 0.0;  // softplus(-d_real) + softplus(d_fake)
  double g = 0.0;  // softplus(-d_fake)
};

AdversarialLosses adversarial_losses(double d_real, double d_fake);

/// Mean |w - w_hat|.
template <typename Scalar>
double style_reconstruction_loss(const Tensor<Scalar>& w, const Tensor<Scalar>& w_hat);
/// Mean |img1 - img2|; enters the generator objective with coefficient -lambda_ds.
template <typename Scalar>
double diversity_sensitive_loss(const Tensor<Scalar>& img1, const Tensor<Scalar>& img2);
/// Mean |source - reconstructed|.
template <typename Scalar>
double cycle_loss(const Tensor<Scalar>& source, const Tensor<Scalar>& reconstructed);

template <typename Scalar>
struct R1Result {
  double value = 0.0;
  /// Gradient w.r.t. the model parameters (discriminator entries only); empty unless requested.
  Gradients<Scalar> grads;
};

/// (gamma / 2) * mean over samples of ||d D(x_n) / d x_n||^2 on real images.
///
/// The parameter gradient is gamma / N * H g with g = grad_x sum D and H the mixed
/// parameter/input Hessian, taken as a central difference of parameter gradients along g:
/// [grad_theta sum D(x + e g) - grad_theta sum D(x - e g)] / 2e, with e g at most `probe`
/// per pixel. D is piecewise affine in x, so the difference is exact unless a leaky-ReLU
/// kink is crossed.
template <typename Scalar>
R1Result<Scalar> r1_penalty(const TranslationModel<Scalar>& model, const Tensor<Scalar>& real,
                            const std::vector<int>& domains, double gamma, bool with_grads = true,
                            double probe = std::is_same_v<Scalar, float> ? 1e-2 : 1e-4);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;
  std::vector<std::int64_t> steps;  // per parameter; parameters update in different phases
};

/// Bias-corrected Adam update of every parameter with a non-empty gradient.
template <typename Scalar>
void adam_step(ParameterStore<Scalar>& params, const Gradients<Scalar>& grads, AdamState<Scalar>& state,
               const AdamConfig& cfg);

struct TrainConfig {
  ArchConfig arch;
  LossWeights weights;
  AdamConfig adam;
  Index iterations = 200;
  Index batch = 8;
  std::uint64_t seed = 0;
  Index log_every = 10;
  Index checkpoint_every = 0;  // 0: final checkpoint only

  void validate() const;
};

/// Loss terms of one iteration. The latent and reference phases each run a
/// discriminator and a generator update.
struct LossRecord {
  Index iteration = 0;
  double lambda_ds = 0.0;
  double d_latent = 0.0, d_r1_latent = 0.0, d_ref = 0.0, d_r1_ref = 0.0;
  double g_adv_latent = 0.0, g_sty_latent = 0.0, g_ds_latent = 0.0, g_cyc_latent = 0.0, g_total_latent = 0.0;
  double g_adv_ref = 0.0, g_sty_ref = 0.0, g_ds_ref = 0.0, g_cyc_ref = 0.0, g_total_ref = 0.0;

  static std::string csv_header();
  std::string csv_row() const;
  bool all_finite() const;
};

/// Training images grouped by domain (train split only).
struct TrainData {
  std::vector<std::vector<Tensor<float>>> by_domain;

  static TrainData from_samples(const std::vector<SynthSample>& samples, int num_domains);
};

struct TrainState {
  Index iteration = 0;
  std::uint64_t rng_seed = 0;
  std::mt19937_64 rng;
  TranslationModel<float> model;
  AdamState<float> adam;
  LossRecord last;
};

TrainState init_train_state(const TrainConfig& config);

/// One iteration: D (latent), D (reference), G+F+E (latent), G (reference).
void train_step(TrainState& state, const TrainData& data, const TrainConfig& config);

/// Model arrays plus "train.iteration".
Checkpoint train_checkpoint(const TrainState& state);

struct TrainHooks {
  std::function<void(const LossRecord&)> on_log;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs config.iterations steps; on_log fires every log_every iterations and on the last,
/// on_checkpoint every checkpoint_every iterations and at the end.
TrainState train(const TrainConfig& config, const TrainData& data, const TrainHooks& hooks = {});

/// train() writing losses.csv, checkpoint_<iter>.adrl and final.adrl into out_dir.
TrainState train_to_directory(const TrainConfig& config, const TrainData& data, const std::string& out_dir);

}  // namespace adarelu
