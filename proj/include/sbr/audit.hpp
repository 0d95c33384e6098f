#pragma once

#include <string>
#include <vector>

#include "sbr/cnn.hpp"
#include "sbr/manifest.hpp"

namespace sbr {

struct SbrConfig {
  double threshold = 0.15;         // strict ">" at the boundary
  double audit_temperature = 0.85;

  void validate() const;
};

struct AuditRecord {
  std::string id;
  int label;
  double score;     // sigmoid output at the audit temperature
  double distance;  // |score - label|, in [0,1]
  bool flagged;     // distance > threshold
};

struct ScoreAudit {
  SbrConfig config;
  std::string checkpoint_id;
  std::vector<AuditRecord> records;
};

// Scores the model on its own training manifest; one record per sample,
// manifest order preserved.
ScoreAudit audit_scores(const CnnCheckpoint& ckpt,
                        const DatasetManifest& train_manifest,
                        const SbrConfig& cfg);

// Ids with distance strictly above the threshold, in stable manifest order.
std::vector<std::string> flag_underrepresented(const ScoreAudit& audit,
                                               double threshold);

// Audit JSON with scores and distances at 9 significant digits.
void save_audit(const ScoreAudit& audit, const std::string& path);
ScoreAudit load_audit(const std::string& path);

// Keeps every original sample and appends 3 augmented records per flagged id
// (flip, crop_left_85, crop_right_85), images written under
// <out_dir>/augmented/. New size = old + 3 * |flagged|.
DatasetManifest resample_dataset(const DatasetManifest& train_manifest,
                                 const std::vector<std::string>& flagged_ids,
                                 const std::string& out_dir);

struct SbrRunResult {
  CnnCheckpoint baseline;
  ScoreAudit audit;
  DatasetManifest resampled;
  CnnCheckpoint retrained;
};

// Algorithm: train -> audit -> flag -> resample -> retrain from scratch.
// Artifacts land in run_dir (baseline.ckpt, audit.json,
// resampled_manifest.json, augmented/, retrained.ckpt, run.log); stages with
// loadable artifacts on disk are skipped, making the pipeline resumable.
// The retrain uses the same TrainConfig with a seed derived from the base
// seed so initialization is fresh.
SbrRunResult run_sbr_pipeline(const DatasetManifest& train_manifest,
                              const DatasetManifest& val_manifest,
                              const TrainConfig& train_cfg,
                              const SbrConfig& sbr_cfg,
                              const std::string& run_dir);

}  // namespace sbr
