#include "sbr/dbvae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "sbr/errors.hpp"
#include "sbr/rng.hpp"

using ordered_json = nlohmann::ordered_json;

namespace sbr {

void VaeConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (kl_coefficient < 0) throw ConfigError("kl_coefficient must be >= 0");
  if (histogram_bins < 2) throw ConfigError("histogram_bins must be >= 2");
  if (!(smoothing_alpha > 0)) throw ConfigError("smoothing_alpha must be > 0");
  if (indicator_label < -1 || indicator_label > 1)
    throw ConfigError("indicator_label must be -1, 0, or 1");
}

namespace {

Tensor<float> glorot(Shape shape, Eigen::Index fan_in, Eigen::Index fan_out,
                     Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  return Tensor<float>::uniform(std::move(shape), rng, -bound, bound);
}

}  // namespace

DbvaeModel build_dbvae(const DbvaeArchitecture& arch, std::uint64_t seed) {
  if (arch.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  const auto& trunk = arch.trunk;
  const Eigen::Index flat = trunk.flatten_size();
  const Eigen::Index k = arch.latent_dim;

  DbvaeModel m;
  m.arch = arch;
  Rng rng(derive_seed(seed, "dbvae-init"));
  auto push = [&m](const std::string& name, Tensor<float> t) {
    m.names.push_back(name);
    m.params.push_back(std::move(t));
  };

  int cin = trunk.input_channels;
  for (std::size_t i = 0; i < trunk.stages.size(); ++i) {
    const auto& st = trunk.stages[i];
    const Eigen::Index kk = st.kernel;
    push("enc.conv" + std::to_string(i) + ".kernel",
         glorot({kk, kk, cin, st.filters}, kk * kk * cin, kk * kk * st.filters, rng));
    push("enc.conv" + std::to_string(i) + ".bias", Tensor<float>::zeros({st.filters}));
    cin = st.filters;
  }
  push("enc.fc1.weight", glorot({flat, trunk.hidden_dense}, flat, trunk.hidden_dense, rng));
  push("enc.fc1.bias", Tensor<float>::zeros({trunk.hidden_dense}));
  push("enc.fc2.weight",
       glorot({trunk.hidden_dense, 2 * k + 1}, trunk.hidden_dense, 2 * k + 1, rng));
  push("enc.fc2.bias", Tensor<float>::zeros({2 * k + 1}));

  push("dec.fc1.weight", glorot({k, trunk.hidden_dense}, k, trunk.hidden_dense, rng));
  push("dec.fc1.bias", Tensor<float>::zeros({trunk.hidden_dense}));
  push("dec.fc2.weight", glorot({trunk.hidden_dense, flat}, trunk.hidden_dense, flat, rng));
  push("dec.fc2.bias", Tensor<float>::zeros({flat}));
  // mirrored transposed-conv stages
  for (std::size_t i = trunk.stages.size(); i-- > 0;) {
    const auto& st = trunk.stages[i];
    const int cout = i == 0 ? trunk.input_channels : trunk.stages[i - 1].filters;
    const Eigen::Index kk = st.kernel;
    const std::string name = "dec.tconv" + std::to_string(trunk.stages.size() - 1 - i);
    push(name + ".kernel",
         glorot({kk, kk, cout, st.filters}, kk * kk * st.filters, kk * kk * cout, rng));
    push(name + ".bias", Tensor<float>::zeros({cout}));
  }
  for (auto& p : m.params) p.set_requires_grad(true);
  return m;
}

EncoderOutput DbvaeModel::encode(const Tensor<float>& images) const {
  const auto& trunk = arch.trunk;
  Tensor<float> x = images;
  std::size_t p = 0;
  for (std::size_t i = 0; i < trunk.stages.size(); ++i) {
    x = relu(channel_bias(conv2d(x, params[p], trunk.stages[i].stride, Padding::kSame),
                          params[p + 1]));
    p += 2;
  }
  x = reshape(x, {images.dim(0), trunk.flatten_size()});
  x = relu(dense(x, params[p], params[p + 1]));
  x = dense(x, params[p + 2], params[p + 3]);
  const Eigen::Index k = arch.latent_dim;
  EncoderOutput out;
  out.z_o = slice_cols(x, 0, 1);
  out.mu = slice_cols(x, 1, k);
  out.log_var = slice_cols(x, 1 + k, k);
  return out;
}

Tensor<float> DbvaeModel::decode(const Tensor<float>& z) const {
  const auto& trunk = arch.trunk;
  if (z.rank() != 2 || z.dim(1) != arch.latent_dim)
    throw DimensionError("decode: z must be [N," + std::to_string(arch.latent_dim) + "]");
  std::size_t p = 2 * trunk.stages.size() + 4;  // first decoder parameter
  Tensor<float> x = relu(dense(z, params[p], params[p + 1]));
  x = relu(dense(x, params[p + 2], params[p + 3]));
  const int s = trunk.final_spatial();
  x = reshape(x, {z.dim(0), s, s, static_cast<Eigen::Index>(trunk.stages.back().filters)});
  p += 4;
  const std::size_t n_stages = trunk.stages.size();
  for (std::size_t i = 0; i < n_stages; ++i) {
    const auto& st = trunk.stages[n_stages - 1 - i];
    x = channel_bias(conv2d_transpose(x, params[p], st.stride), params[p + 1]);
    if (i + 1 < n_stages)
      x = relu(x);
    else
      x = sigmoid_temperature(x, TemperatureConfig{1.0});
    p += 2;
  }
  return x;
}

void DbvaeModel::zero_grads() {
  for (auto& p : params) p.zero_grad();
}

LatentStats update_latent_histograms(const std::vector<Array<float>>& mu_rows,
                                     const VaeConfig& cfg) {
  cfg.validate();
  if (mu_rows.empty()) throw DomainError("update_latent_histograms: no samples");
  const Eigen::Index k = mu_rows.front().size();
  const std::size_t n = mu_rows.size();

  LatentStats stats;
  stats.dims.resize(static_cast<std::size_t>(k));
  std::vector<std::vector<int>> bin_of(static_cast<std::size_t>(k),
                                       std::vector<int>(n, 0));
  for (Eigen::Index j = 0; j < k; ++j) {
    auto& h = stats.dims[static_cast<std::size_t>(j)];
    h.lo = h.hi = mu_rows[0][j];
    for (const auto& row : mu_rows) {
      h.lo = std::min<double>(h.lo, row[j]);
      h.hi = std::max<double>(h.hi, row[j]);
    }
    const int bins = h.hi > h.lo ? cfg.histogram_bins : 1;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < n; ++i) {
      int b = 0;
      if (bins > 1) {
        b = static_cast<int>((mu_rows[i][j] - h.lo) / (h.hi - h.lo) * bins);
        b = std::clamp(b, 0, bins - 1);
      }
      h.counts[static_cast<std::size_t>(b)] += 1;
      bin_of[static_cast<std::size_t>(j)][i] = b;
    }
  }

  // log-space product of inverse smoothed frequencies, then normalize
  std::vector<double> logw(n, 0.0);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& h = stats.dims[static_cast<std::size_t>(j)];
    for (std::size_t i = 0; i < n; ++i) {
      const double freq =
          static_cast<double>(h.counts[static_cast<std::size_t>(
              bin_of[static_cast<std::size_t>(j)][i])]) /
          static_cast<double>(n);
      logw[i] -= std::log(freq + cfg.smoothing_alpha);
    }
  }
  const double lmax = *std::max_element(logw.begin(), logw.end());
  stats.probabilities.resize(n);
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    stats.probabilities[i] = std::exp(logw[i] - lmax);
    sum += stats.probabilities[i];
  }
  for (double& p : stats.probabilities) p /= sum;
  return stats;
}

namespace {

std::vector<std::size_t> draw_with_replacement(const std::vector<double>& probs,
                                               std::size_t count, Rng& rng) {
  std::vector<double> cdf(probs.size());
  std::partial_sum(probs.begin(), probs.end(), cdf.begin());
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = rng.uniform() * cdf.back();
    out[i] = static_cast<std::size_t>(
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    if (out[i] >= probs.size()) out[i] = probs.size() - 1;
  }
  return out;
}

}  // namespace

DbvaeTrainResult train_dbvae(const DatasetManifest& train_manifest,
                             const DatasetManifest& val_manifest,
                             const VaeConfig& vae_cfg, const TrainConfig& cfg) {
  (void)val_manifest;
  vae_cfg.validate();
  cfg.validate();
  train_manifest.validate();

  TensorDataset data = TensorDataset::load(train_manifest);
  const std::size_t n = data.ids.size();

  DbvaeTrainResult res;
  res.checkpoint.vae = vae_cfg;
  res.checkpoint.config = cfg;
  DbvaeArchitecture arch;
  arch.latent_dim = vae_cfg.latent_dim;
  res.checkpoint.model = build_dbvae(arch, cfg.seed);
  DbvaeModel& model = res.checkpoint.model;

  AdamState<float> opt = cfg.optimizer;
  opt.reset(model.params);
  EarlyStopMonitor monitor(cfg.early_stop_patience);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // refresh latent statistics from the current encoder
    std::vector<Array<float>> mu_rows;
    mu_rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      mu_rows.push_back(model.encode(data.batch({i})).mu.values());
    LatentStats stats = update_latent_histograms(mu_rows, vae_cfg);
    if (!vae_cfg.resampling_enabled)
      stats.probabilities.assign(n, 1.0 / static_cast<double>(n));
    res.per_epoch_stats.push_back(stats);

    Rng draw_rng(derive_seed(cfg.seed, "dbvae-draw/epoch-" + std::to_string(epoch)));
    std::vector<std::size_t> order;
    if (vae_cfg.resampling_enabled) {
      order = draw_with_replacement(stats.probabilities, n, draw_rng);
    } else {
      order.resize(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      draw_rng.shuffle(order);
    }

    double total_sum = 0, class_sum = 0, recon_sum = 0, kl_sum = 0;
    std::size_t correct = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      const Eigen::Index bsz = static_cast<Eigen::Index>(idx.size());

      Tensor<float> x = data.batch(idx);
      Array<float> yv(bsz);
      Array<float> ind(bsz);
      for (Eigen::Index i = 0; i < bsz; ++i) {
        const int label = data.labels[idx[static_cast<std::size_t>(i)]];
        yv[i] = static_cast<float>(label);
        ind[i] = (vae_cfg.indicator_label < 0 || label == vae_cfg.indicator_label)
                     ? 1.0f
                     : 0.0f;
      }
      Tensor<float> y({bsz, 1}, yv);

      EncoderOutput enc = model.encode(x);
      Tensor<float> loss;
      Tensor<float> l_y =
          bce_loss(sigmoid_temperature(enc.z_o, TemperatureConfig{1.0}), y);
      double recon_v = 0, kl_v = 0;
      if (vae_cfg.vae_term_enabled) {
        Rng eps_rng(derive_seed(cfg.seed, "dbvae-eps/epoch-" + std::to_string(epoch) +
                                              "/batch-" + std::to_string(batch_index)));
        Tensor<float> eps = Tensor<float>::normal(enc.mu.shape(), eps_rng);
        Tensor<float> z = reparameterize(enc.mu, enc.log_var, eps);
        Tensor<float> x_hat = model.decode(z);
        Tensor<float> kl_t = kl_unit_gaussian(enc.mu, enc.log_var, &ind);
        Tensor<float> l1_t = l1_loss(x, x_hat, &ind);
        loss = add(l_y, add(scale(kl_t, static_cast<float>(vae_cfg.kl_coefficient)), l1_t));
        recon_v = l1_t.value();
        kl_v = kl_t.value();
      } else {
        loss = l_y;
      }
      if (!std::isfinite(loss.value()))
        throw NumericError("non-finite DB-VAE loss at epoch " + std::to_string(epoch));

      model.zero_grads();
      backward(loss);
      adam_step(model.params, opt);

      const double w = static_cast<double>(bsz);
      total_sum += loss.value() * w;
      class_sum += l_y.value() * w;
      recon_sum += recon_v * w;
      kl_sum += kl_v * w;
      Tensor<float> p = sigmoid_temperature(enc.z_o, TemperatureConfig{1.0});
      for (Eigen::Index i = 0; i < bsz; ++i)
        correct += ((p.value(i) >= 0.5f) ==
                    (data.labels[idx[static_cast<std::size_t>(i)]] == 1))
                       ? 1
                       : 0;
    }

    DbvaeEpochStats es;
    es.epoch = epoch;
    es.total_loss = total_sum / static_cast<double>(n);
    es.class_loss = class_sum / static_cast<double>(n);
    es.recon_loss = recon_sum / static_cast<double>(n);
    es.kl_loss = kl_sum / static_cast<double>(n);
    es.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    res.checkpoint.history.push_back(es);
    res.checkpoint.final_epoch = epoch;
    if (monitor.observe(es.train_accuracy)) break;
  }
  return res;
}

std::vector<ScoredSample> predict_dbvae(const DbvaeCheckpoint& ckpt,
                                        const DatasetManifest& manifest) {
  TensorDataset data = TensorDataset::load(manifest);
  std::vector<ScoredSample> out;
  for (std::size_t i = 0; i < data.ids.size(); ++i) {
    EncoderOutput enc = ckpt.model.encode(data.batch({i}));
    Tensor<float> p = sigmoid_temperature(enc.z_o, TemperatureConfig{1.0});
    out.push_back({data.ids[i], data.labels[i], static_cast<double>(p.value())});
  }
  return out;
}

Checkpoint DbvaeCheckpoint::to_container() const {
  Checkpoint c;
  c.model_kind = "dbvae";
  nlohmann::ordered_json trunk;
  trunk["input_size"] = model.arch.trunk.input_size;
  trunk["input_channels"] = model.arch.trunk.input_channels;
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  for (const auto& st : model.arch.trunk.stages)
    stages.push_back({st.filters, st.kernel, st.stride});
  trunk["stages"] = std::move(stages);
  trunk["hidden_dense"] = model.arch.trunk.hidden_dense;
  c.meta["trunk"] = std::move(trunk);
  c.meta["latent_dim"] = model.arch.latent_dim;
  c.meta["vae_config"] = {{"kl_coefficient", vae.kl_coefficient},
                          {"histogram_bins", vae.histogram_bins},
                          {"smoothing_alpha", vae.smoothing_alpha},
                          {"indicator_label", vae.indicator_label},
                          {"resampling_enabled", vae.resampling_enabled},
                          {"vae_term_enabled", vae.vae_term_enabled}};
  c.meta["train_config"] = {{"batch_size", config.batch_size},
                            {"max_epochs", config.max_epochs},
                            {"learning_rate", config.optimizer.learning_rate},
                            {"beta1", config.optimizer.beta1},
                            {"beta2", config.optimizer.beta2},
                            {"epsilon", config.optimizer.epsilon},
                            {"early_stop_patience", config.early_stop_patience},
                            {"seed", config.seed},
                            {"training_temperature", config.training_temperature}};
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& e : history)
    hist.push_back({{"epoch", e.epoch},
                    {"total_loss", e.total_loss},
                    {"class_loss", e.class_loss},
                    {"recon_loss", e.recon_loss},
                    {"kl_loss", e.kl_loss},
                    {"train_accuracy", e.train_accuracy}});
  c.meta["history"] = std::move(hist);
  c.meta["final_epoch"] = final_epoch;
  for (std::size_t i = 0; i < model.params.size(); ++i)
    c.tensors.emplace_back(model.names[i], model.params[i]);
  return c;
}

DbvaeCheckpoint DbvaeCheckpoint::from_container(const Checkpoint& c) {
  if (c.model_kind != "dbvae")
    throw IoError("expected a dbvae checkpoint, found model kind '" + c.model_kind + "'");
  DbvaeCheckpoint out;
  const auto& trunk = c.meta.at("trunk");
  out.model.arch.trunk.input_size = trunk.at("input_size").get<int>();
  out.model.arch.trunk.input_channels = trunk.at("input_channels").get<int>();
  out.model.arch.trunk.stages.clear();
  for (const auto& st : trunk.at("stages"))
    out.model.arch.trunk.stages.push_back(
        {st.at(0).get<int>(), st.at(1).get<int>(), st.at(2).get<int>()});
  out.model.arch.trunk.hidden_dense = trunk.at("hidden_dense").get<int>();
  out.model.arch.latent_dim = c.meta.at("latent_dim").get<int>();

  const auto& v = c.meta.at("vae_config");
  out.vae.latent_dim = out.model.arch.latent_dim;
  out.vae.kl_coefficient = v.at("kl_coefficient").get<double>();
  out.vae.histogram_bins = v.at("histogram_bins").get<int>();
  out.vae.smoothing_alpha = v.at("smoothing_alpha").get<double>();
  out.vae.indicator_label = v.at("indicator_label").get<int>();
  out.vae.resampling_enabled = v.at("resampling_enabled").get<bool>();
  out.vae.vae_term_enabled = v.at("vae_term_enabled").get<bool>();

  const auto& cfg = c.meta.at("train_config");
  out.config.batch_size = cfg.at("batch_size").get<int>();
  out.config.max_epochs = cfg.at("max_epochs").get<int>();
  out.config.optimizer.learning_rate = cfg.at("learning_rate").get<double>();
  out.config.optimizer.beta1 = cfg.at("beta1").get<double>();
  out.config.optimizer.beta2 = cfg.at("beta2").get<double>();
  out.config.optimizer.epsilon = cfg.at("epsilon").get<double>();
  out.config.early_stop_patience = cfg.at("early_stop_patience").get<int>();
  out.config.seed = cfg.at("seed").get<std::uint64_t>();
  out.config.training_temperature = cfg.at("training_temperature").get<double>();

  for (const auto& e : c.meta.at("history")) {
    DbvaeEpochStats s;
    s.epoch = e.at("epoch").get<int>();
    s.total_loss = e.at("total_loss").get<double>();
    s.class_loss = e.at("class_loss").get<double>();
    s.recon_loss = e.at("recon_loss").get<double>();
    s.kl_loss = e.at("kl_loss").get<double>();
    s.train_accuracy = e.at("train_accuracy").get<double>();
    out.history.push_back(s);
  }
  out.final_epoch = c.meta.at("final_epoch").get<int>();
  for (const auto& [name, t] : c.tensors) {
    out.model.names.push_back(name);
    out.model.params.push_back(t);
  }
  return out;
}

std::string DbvaeCheckpoint::id() const { return checkpoint_digest(to_container()); }

void save_checkpoint(const DbvaeCheckpoint& c, const std::string& path) {
  save_checkpoint(c.to_container(), path);
}

DbvaeCheckpoint load_dbvae_checkpoint(const std::string& path) {
  return DbvaeCheckpoint::from_container(load_checkpoint(path));
}

void save_latent_stats(const std::vector<LatentStats>& stats,
                       const std::string& path) {
  ordered_json epochs = ordered_json::array();
  for (const auto& s : stats) {
    ordered_json e;
    ordered_json dims = ordered_json::array();
    for (const auto& d : s.dims)
      dims.push_back({{"lo", d.lo}, {"hi", d.hi}, {"counts", d.counts}});
    e["dims"] = std::move(dims);
    e["probabilities"] = s.probabilities;
    epochs.push_back(std::move(e));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write latent stats: " + path);
  out << epochs.dump() << "\n";
}

}  // namespace sbr
