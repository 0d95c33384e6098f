#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sbr/cnn.hpp"

namespace sbr {

struct VaeConfig {
  int latent_dim = 100;
  double kl_coefficient = 0.0005;
  int histogram_bins = 10;
  double smoothing_alpha = 0.001;
  // -1: VAE term applies to every sample; 0/1: only to that class.
  int indicator_label = -1;
  bool resampling_enabled = true;
  // When false the VAE term is dropped entirely and training reduces to the
  // plain classification objective on z_o.
  bool vae_term_enabled = true;

  void validate() const;
};

// Encoder shares the classifier trunk; its head emits [z_o | mu | log_var]
// (width 2k+1). The decoder mirrors the trunk with transposed convolutions.
struct DbvaeArchitecture {
  CnnArchitecture trunk;  // conv stages + hidden dense width
  int latent_dim = 100;
};

struct EncoderOutput {
  Tensor<float> z_o;      // [N,1] supervised class logit
  Tensor<float> mu;       // [N,k]
  Tensor<float> log_var;  // [N,k]
};

struct DbvaeModel {
  DbvaeArchitecture arch;
  std::vector<std::string> names;
  std::vector<Tensor<float>> params;

  EncoderOutput encode(const Tensor<float>& images) const;
  // z [N,k] -> images [N,H,W,3] in [0,1] (final sigmoid).
  Tensor<float> decode(const Tensor<float>& z) const;
  void zero_grads();
};

DbvaeModel build_dbvae(const DbvaeArchitecture& arch, std::uint64_t seed);

// z = mu + exp(log_var / 2) * eps.
template <class S>
Tensor<S> reparameterize(const Tensor<S>& mu, const Tensor<S>& log_var,
                         const Tensor<S>& eps) {
  if (mu.shape() != log_var.shape() || mu.shape() != eps.shape())
    throw DimensionError("reparameterize: shape mismatch");
  return add(mu, mul(exp_elem(scale(log_var, S(0.5))), eps));
}

// c * KL + L1 reconstruction, optionally weighted per sample.
template <class S>
Tensor<S> vae_loss(const Tensor<S>& x, const Tensor<S>& x_hat,
                   const Tensor<S>& mu, const Tensor<S>& log_var, double c,
                   const Array<S>* row_weights = nullptr) {
  if (c < 0) throw ConfigError("vae_loss: negative regularization coefficient");
  return add(scale(kl_unit_gaussian(mu, log_var, row_weights), static_cast<S>(c)),
             l1_loss(x, x_hat, row_weights));
}

// Classification BCE on sigmoid(z_o) plus indicator-masked VAE term,
// averaged over the batch. Indicator entries must be 0 or 1.
template <class S>
Tensor<S> dbvae_total_loss(const Tensor<S>& targets, const Tensor<S>& z_o,
                           const Tensor<S>& x, const Tensor<S>& x_hat,
                           const Tensor<S>& mu, const Tensor<S>& log_var,
                           double c, const Array<S>& indicator) {
  for (Eigen::Index i = 0; i < indicator.size(); ++i)
    if (indicator[i] != S(0) && indicator[i] != S(1))
      throw DomainError("dbvae_total_loss: indicator values must be 0 or 1");
  Tensor<S> l_y = bce_loss(sigmoid_temperature(z_o, TemperatureConfig{1.0}), targets);
  return add(l_y, vae_loss(x, x_hat, mu, log_var, c, &indicator));
}

struct LatentHistogram {
  double lo = 0, hi = 0;
  std::vector<long> counts;  // histogram_bins entries, or 1 when degenerate
};

struct LatentStats {
  std::vector<LatentHistogram> dims;       // one per latent dimension
  std::vector<double> probabilities;       // per sample, sums to 1
};

// Per-dimension histograms over observed mu values; sample weights
// proportional to prod_j 1/(frequency_j(mu_j) + alpha), computed in log
// space and normalized to a distribution.
LatentStats update_latent_histograms(const std::vector<Array<float>>& mu_rows,
                                     const VaeConfig& cfg);

struct DbvaeEpochStats {
  int epoch = 0;
  double total_loss = 0;
  double class_loss = 0;
  double recon_loss = 0;
  double kl_loss = 0;
  double train_accuracy = 0;
};

struct DbvaeCheckpoint {
  DbvaeModel model;
  VaeConfig vae;
  TrainConfig config;
  std::vector<DbvaeEpochStats> history;
  int final_epoch = 0;

  std::string id() const;
  Checkpoint to_container() const;
  static DbvaeCheckpoint from_container(const Checkpoint& c);
};

void save_checkpoint(const DbvaeCheckpoint& c, const std::string& path);
DbvaeCheckpoint load_dbvae_checkpoint(const std::string& path);

struct DbvaeTrainResult {
  DbvaeCheckpoint checkpoint;
  std::vector<LatentStats> per_epoch_stats;  // recomputed once per epoch
};

// Per epoch: refresh latent statistics from the current encoder, then draw
// batches with replacement under those probabilities and optimize the total
// loss with Adam. Early stopping mirrors the classifier (train accuracy).
DbvaeTrainResult train_dbvae(const DatasetManifest& train_manifest,
                             const DatasetManifest& val_manifest,
                             const VaeConfig& vae_cfg, const TrainConfig& cfg);

// Deterministic, sampling-free: sigmoid of z_o per sample.
std::vector<ScoredSample> predict_dbvae(const DbvaeCheckpoint& ckpt,
                                        const DatasetManifest& manifest);

void save_latent_stats(const std::vector<LatentStats>& stats,
                       const std::string& path);

}  // namespace sbr
