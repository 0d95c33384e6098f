#include "sbr/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sbr/errors.hpp"
#include "sbr/rng.hpp"

namespace sbr {

int CnnArchitecture::final_spatial() const {
  if (input_size < 1) throw ConfigError("input size must be positive");
  int s = input_size;
  for (const auto& st : stages) {
    if (st.stride < 1 || st.kernel < 1 || st.filters < 1)
      throw ConfigError("conv stage fields must be positive");
    s = (s + st.stride - 1) / st.stride;  // "same" padding
    if (s < 1) throw ConfigError("architecture collapses the spatial extent");
  }
  return s;
}

Eigen::Index CnnArchitecture::flatten_size() const {
  const int s = final_spatial();
  const int c = stages.empty() ? input_channels : stages.back().filters;
  return static_cast<Eigen::Index>(s) * s * c;
}

Eigen::Index CnnArchitecture::parameter_count() const {
  Eigen::Index total = 0;
  int cin = input_channels;
  for (const auto& st : stages) {
    total += static_cast<Eigen::Index>(st.kernel) * st.kernel * cin * st.filters +
             st.filters;
    cin = st.filters;
  }
  total += flatten_size() * hidden_dense + hidden_dense;
  total += hidden_dense + 1;
  return total;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (!(training_temperature > 0)) throw ConfigError("training_temperature must be > 0");
}

namespace {

Tensor<float> glorot_uniform(Shape shape, Eigen::Index fan_in,
                             Eigen::Index fan_out, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  return Tensor<float>::uniform(std::move(shape), rng, -bound, bound);
}

}  // namespace

CnnModel build_cnn(const CnnArchitecture& arch, std::uint64_t seed) {
  arch.flatten_size();  // validates
  CnnModel m;
  m.arch = arch;
  Rng rng(derive_seed(seed, "cnn-init"));
  int cin = arch.input_channels;
  for (std::size_t i = 0; i < arch.stages.size(); ++i) {
    const auto& st = arch.stages[i];
    const Eigen::Index k = st.kernel;
    m.names.push_back("conv" + std::to_string(i) + ".kernel");
    m.params.push_back(glorot_uniform({k, k, cin, st.filters}, k * k * cin,
                                      k * k * st.filters, rng));
    m.names.push_back("conv" + std::to_string(i) + ".bias");
    m.params.push_back(Tensor<float>::zeros({st.filters}));
    cin = st.filters;
  }
  const Eigen::Index flat = arch.flatten_size();
  m.names.push_back("fc1.weight");
  m.params.push_back(glorot_uniform({flat, arch.hidden_dense}, flat,
                                    arch.hidden_dense, rng));
  m.names.push_back("fc1.bias");
  m.params.push_back(Tensor<float>::zeros({arch.hidden_dense}));
  m.names.push_back("fc2.weight");
  m.params.push_back(glorot_uniform({arch.hidden_dense, 1}, arch.hidden_dense, 1, rng));
  m.names.push_back("fc2.bias");
  m.params.push_back(Tensor<float>::zeros({1}));
  for (auto& p : m.params) p.set_requires_grad(true);
  return m;
}

Tensor<float> CnnModel::logits(const Tensor<float>& input) const {
  if (input.rank() != 4 || input.dim(3) != arch.input_channels)
    throw DimensionError("cnn forward expects NHWC input with " +
                         std::to_string(arch.input_channels) + " channels");
  Tensor<float> x = input;
  std::size_t p = 0;
  for (std::size_t i = 0; i < arch.stages.size(); ++i) {
    x = conv2d(x, params[p], arch.stages[i].stride, Padding::kSame);
    x = channel_bias(x, params[p + 1]);
    x = relu(x);
    p += 2;
  }
  x = reshape(x, {input.dim(0), arch.flatten_size()});
  x = relu(dense(x, params[p], params[p + 1]));
  return dense(x, params[p + 2], params[p + 3]);
}

void CnnModel::zero_grads() {
  for (auto& p : params) p.zero_grad();
}

Checkpoint CnnCheckpoint::to_container() const {
  Checkpoint c;
  c.model_kind = "cnn";
  nlohmann::ordered_json arch;
  arch["input_size"] = model.arch.input_size;
  arch["input_channels"] = model.arch.input_channels;
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  for (const auto& st : model.arch.stages)
    stages.push_back({st.filters, st.kernel, st.stride});
  arch["stages"] = std::move(stages);
  arch["hidden_dense"] = model.arch.hidden_dense;
  c.meta["architecture"] = std::move(arch);

  nlohmann::ordered_json cfg;
  cfg["batch_size"] = config.batch_size;
  cfg["max_epochs"] = config.max_epochs;
  cfg["learning_rate"] = config.optimizer.learning_rate;
  cfg["beta1"] = config.optimizer.beta1;
  cfg["beta2"] = config.optimizer.beta2;
  cfg["epsilon"] = config.optimizer.epsilon;
  cfg["early_stop_patience"] = config.early_stop_patience;
  cfg["seed"] = config.seed;
  cfg["training_temperature"] = config.training_temperature;
  c.meta["train_config"] = std::move(cfg);

  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (const auto& e : history)
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"train_accuracy", e.train_accuracy},
                    {"val_loss", e.val_loss},
                    {"val_accuracy", e.val_accuracy}});
  c.meta["history"] = std::move(hist);
  c.meta["final_epoch"] = final_epoch;

  for (std::size_t i = 0; i < model.params.size(); ++i)
    c.tensors.emplace_back(model.names[i], model.params[i]);
  return c;
}

CnnCheckpoint CnnCheckpoint::from_container(const Checkpoint& c) {
  if (c.model_kind != "cnn")
    throw IoError("expected a cnn checkpoint, found model kind '" + c.model_kind + "'");
  CnnCheckpoint out;
  const auto& arch = c.meta.at("architecture");
  out.model.arch.input_size = arch.at("input_size").get<int>();
  out.model.arch.input_channels = arch.at("input_channels").get<int>();
  out.model.arch.stages.clear();
  for (const auto& st : arch.at("stages"))
    out.model.arch.stages.push_back({st.at(0).get<int>(), st.at(1).get<int>(),
                                     st.at(2).get<int>()});
  out.model.arch.hidden_dense = arch.at("hidden_dense").get<int>();

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
    EpochStats s;
    s.epoch = e.at("epoch").get<int>();
    s.train_loss = e.at("train_loss").get<double>();
    s.train_accuracy = e.at("train_accuracy").get<double>();
    s.val_loss = e.at("val_loss").get<double>();
    s.val_accuracy = e.at("val_accuracy").get<double>();
    out.history.push_back(s);
  }
  out.final_epoch = c.meta.at("final_epoch").get<int>();

  for (const auto& [name, t] : c.tensors) {
    out.model.names.push_back(name);
    out.model.params.push_back(t);
  }
  if (out.model.params.size() != 2 * out.model.arch.stages.size() + 4)
    throw IoError("checkpoint tensor count disagrees with architecture");
  return out;
}

std::string CnnCheckpoint::id() const { return checkpoint_digest(to_container()); }

void save_checkpoint(const CnnCheckpoint& c, const std::string& path) {
  save_checkpoint(c.to_container(), path);
}

CnnCheckpoint load_cnn_checkpoint(const std::string& path) {
  return CnnCheckpoint::from_container(load_checkpoint(path));
}

TensorDataset TensorDataset::load(const DatasetManifest& m) {
  TensorDataset d;
  for (const auto& s : m.samples) {
    d.ids.push_back(s.id);
    d.images.push_back(decode_and_preprocess(s).values());
    d.labels.push_back(s.label);
  }
  return d;
}

Tensor<float> TensorDataset::batch(const std::vector<std::size_t>& idx) const {
  const Eigen::Index per = static_cast<Eigen::Index>(kInputSize) * kInputSize * 3;
  Array<float> data(static_cast<Eigen::Index>(idx.size()) * per);
  for (std::size_t i = 0; i < idx.size(); ++i)
    data.segment(static_cast<Eigen::Index>(i) * per, per) = images[idx[i]];
  return Tensor<float>({static_cast<Eigen::Index>(idx.size()), kInputSize,
                        kInputSize, 3},
                       std::move(data));
}

namespace {

Tensor<float> label_tensor(const TensorDataset& d,
                           const std::vector<std::size_t>& idx) {
  Array<float> y(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    y[static_cast<Eigen::Index>(i)] = static_cast<float>(d.labels[idx[i]]);
  return Tensor<float>({static_cast<Eigen::Index>(idx.size()), 1}, std::move(y));
}

// Mean loss / accuracy over a dataset without touching gradients.
std::pair<double, double> evaluate(const CnnModel& model, const TensorDataset& d,
                                   const TemperatureConfig& temp) {
  if (d.ids.empty()) return {0.0, 0.0};
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.ids.size(); ++i) {
    Tensor<float> x = d.batch({i});
    Tensor<float> p = sigmoid_temperature(model.logits(x), temp);
    const double s = p.value();
    const int y = d.labels[i];
    const double pc = std::clamp(s, 1e-7, 1.0 - 1e-7);
    loss += -(y * std::log(pc) + (1 - y) * std::log(1.0 - pc));
    correct += ((s >= 0.5) == (y == 1)) ? 1 : 0;
  }
  return {loss / static_cast<double>(d.ids.size()),
          static_cast<double>(correct) / static_cast<double>(d.ids.size())};
}

}  // namespace

CnnCheckpoint train_cnn(const DatasetManifest& train_manifest,
                        const DatasetManifest& val_manifest,
                        const TrainConfig& cfg) {
  cfg.validate();
  train_manifest.validate();
  bool has0 = false, has1 = false;
  for (const auto& s : train_manifest.samples) (s.label == 0 ? has0 : has1) = true;
  if (!has0 || !has1)
    throw DomainError("training set must contain both classes");

  TensorDataset train_data = TensorDataset::load(train_manifest);
  TensorDataset val_data;
  if (!val_manifest.samples.empty()) val_data = TensorDataset::load(val_manifest);

  CnnCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.model = build_cnn(CnnArchitecture{}, cfg.seed);
  AdamState<float> opt = cfg.optimizer;
  opt.reset(ckpt.model.params);

  const TemperatureConfig train_temp{cfg.training_temperature};
  EarlyStopMonitor monitor(cfg.early_stop_patience);
  const std::size_t n = train_data.ids.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle/epoch-" + std::to_string(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      Tensor<float> x = train_data.batch(idx);
      Tensor<float> y = label_tensor(train_data, idx);
      Tensor<float> p = sigmoid_temperature(ckpt.model.logits(x), train_temp);
      Tensor<float> loss = bce_loss(p, y);
      if (!std::isfinite(loss.value()))
        throw NumericError("non-finite training loss at epoch " +
                           std::to_string(epoch));
      ckpt.model.zero_grads();
      backward(loss);
      adam_step(ckpt.model.params, opt);

      loss_sum += loss.value() * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        correct += ((p.value(static_cast<Eigen::Index>(i)) >= 0.5f) ==
                    (train_data.labels[idx[i]] == 1))
                       ? 1
                       : 0;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (!val_data.ids.empty()) {
      auto [vl, va] = evaluate(ckpt.model, val_data, train_temp);
      stats.val_loss = vl;
      stats.val_accuracy = va;
    }
    ckpt.history.push_back(stats);
    ckpt.final_epoch = epoch;
    if (monitor.observe(stats.train_accuracy)) break;
  }
  return ckpt;
}

std::vector<ScoredSample> predict_scores(const CnnModel& model,
                                         const TensorDataset& data,
                                         const TemperatureConfig& temperature) {
  temperature.validate();
  std::vector<ScoredSample> out;
  out.reserve(data.ids.size());
  for (std::size_t i = 0; i < data.ids.size(); ++i) {
    Tensor<float> p = sigmoid_temperature(model.logits(data.batch({i})), temperature);
    out.push_back({data.ids[i], data.labels[i], static_cast<double>(p.value())});
  }
  return out;
}

std::vector<ScoredSample> predict_scores(const CnnCheckpoint& ckpt,
                                         const DatasetManifest& manifest,
                                         const TemperatureConfig& temperature) {
  return predict_scores(ckpt.model, TensorDataset::load(manifest), temperature);
}

}  // namespace sbr
