#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sbr/adam.hpp"
#include "sbr/checkpoint.hpp"
#include "sbr/manifest.hpp"
#include "sbr/ops.hpp"
#include "sbr/tensor.hpp"

namespace sbr {

struct ConvStage {
  int filters;
  int kernel;
  int stride;
};

// Conv trunk + two dense layers ending in a single logit; no batch norm.
struct CnnArchitecture {
  int input_size = kInputSize;
  int input_channels = 3;
  std::vector<ConvStage> stages = {{12, 5, 2}, {24, 5, 2}, {48, 3, 2}, {72, 3, 2}};
  int hidden_dense = 512;

  // Spatial size after the conv trunk; throws if any stage collapses to zero.
  int final_spatial() const;
  Eigen::Index flatten_size() const;
  Eigen::Index parameter_count() const;
};

struct TrainConfig {
  int batch_size = 32;
  int max_epochs = 20;
  AdamState<float> optimizer;  // lr 1e-4, betas 0.9/0.999, eps 1e-8
  int early_stop_patience = 5;
  std::uint64_t seed = 0;
  double training_temperature = 1.0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
};

// Stops once the monitored accuracy has failed to strictly improve for
// `patience` consecutive epochs.
class EarlyStopMonitor {
 public:
  explicit EarlyStopMonitor(int patience) : patience_(patience) {}

  // Returns true when training should stop after this epoch.
  bool observe(double accuracy) {
    ++epoch_;
    if (accuracy > best_) {
      best_ = accuracy;
      best_epoch_ = epoch_;
      since_best_ = 0;
    } else {
      ++since_best_;
    }
    return since_best_ >= patience_;
  }

  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = -1.0;
};

// Parameter layout: per conv stage "convN.kernel" [kh,kw,cin,cout] and
// "convN.bias" [cout]; then "fc1.weight"/"fc1.bias"/"fc2.weight"/"fc2.bias".
struct CnnModel {
  CnnArchitecture arch;
  std::vector<std::string> names;
  std::vector<Tensor<float>> params;

  // Forward to the raw logit, [N,1] for input [N,64,64,3].
  Tensor<float> logits(const Tensor<float>& input) const;
  void zero_grads();
};

// Deterministic uniform fan-in/fan-out init, biases zero.
CnnModel build_cnn(const CnnArchitecture& arch, std::uint64_t seed);

struct CnnCheckpoint {
  CnnModel model;
  TrainConfig config;
  std::vector<EpochStats> history;
  int final_epoch = 0;

  std::string id() const;  // digest of the serialized form
  Checkpoint to_container() const;
  static CnnCheckpoint from_container(const Checkpoint& c);
};

void save_checkpoint(const CnnCheckpoint& c, const std::string& path);
CnnCheckpoint load_cnn_checkpoint(const std::string& path);

// Decoded, preprocessed dataset held in memory for training/inference.
struct TensorDataset {
  std::vector<std::string> ids;
  std::vector<Array<float>> images;  // flattened 64*64*3 each
  std::vector<int> labels;

  static TensorDataset load(const DatasetManifest& m);
  Tensor<float> batch(const std::vector<std::size_t>& idx) const;
};

// BCE-on-sigmoid training with Adam, seed-deterministic shuffling, early
// stopping on training accuracy. Throws on single-class input.
CnnCheckpoint train_cnn(const DatasetManifest& train_manifest,
                        const DatasetManifest& val_manifest,
                        const TrainConfig& cfg);

struct ScoredSample {
  std::string id;
  int label;
  double score;
};

// One sigmoid score per sample at the given temperature; per-sample forward,
// so results are independent of any batching.
std::vector<ScoredSample> predict_scores(const CnnCheckpoint& ckpt,
                                         const DatasetManifest& manifest,
                                         const TemperatureConfig& temperature);

std::vector<ScoredSample> predict_scores(const CnnModel& model,
                                         const TensorDataset& data,
                                         const TemperatureConfig& temperature);

}  // namespace sbr
