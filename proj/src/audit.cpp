#include "sbr/audit.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "sbr/errors.hpp"
#include "sbr/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace sbr {

void SbrConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("distance threshold must lie in (0,1)");
  if (!(audit_temperature > 0.0))
    throw ConfigError("audit temperature must be > 0");
}

ScoreAudit audit_scores(const CnnCheckpoint& ckpt,
                        const DatasetManifest& train_manifest,
                        const SbrConfig& cfg) {
  cfg.validate();
  if (train_manifest.samples.empty()) throw DomainError("audit: empty manifest");
  ScoreAudit audit;
  audit.config = cfg;
  audit.checkpoint_id = ckpt.id();
  const auto scored =
      predict_scores(ckpt, train_manifest, TemperatureConfig{cfg.audit_temperature});
  for (const auto& s : scored) {
    AuditRecord r;
    r.id = s.id;
    r.label = s.label;
    r.score = s.score;
    r.distance = std::abs(s.score - static_cast<double>(s.label));
    r.flagged = r.distance > cfg.threshold;
    audit.records.push_back(std::move(r));
  }
  return audit;
}

std::vector<std::string> flag_underrepresented(const ScoreAudit& audit,
                                               double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("distance threshold must lie in (0,1)");
  std::vector<std::string> ids;
  for (const auto& r : audit.records)
    if (r.distance > threshold) ids.push_back(r.id);
  return ids;
}

namespace {

// Round-trip-stable 9-significant-digit value.
double sig9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

}  // namespace

void save_audit(const ScoreAudit& audit, const std::string& path) {
  ordered_json j;
  j["config"] = {{"threshold", audit.config.threshold},
                 {"audit_temperature", audit.config.audit_temperature}};
  j["checkpoint_id"] = audit.checkpoint_id;
  ordered_json records = ordered_json::array();
  for (const auto& r : audit.records)
    records.push_back({{"id", r.id},
                       {"label", r.label},
                       {"score", sig9(r.score)},
                       {"distance", sig9(r.distance)},
                       {"flagged", r.flagged}});
  j["records"] = std::move(records);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write audit file: " + path);
  out << j.dump(2) << "\n";
}

ScoreAudit load_audit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("audit file not found: " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("audit parse error in " + path + ": " + e.what());
  }
  ScoreAudit a;
  a.config.threshold = j.at("config").at("threshold").get<double>();
  a.config.audit_temperature = j.at("config").at("audit_temperature").get<double>();
  a.checkpoint_id = j.at("checkpoint_id").get<std::string>();
  for (const auto& r : j.at("records"))
    a.records.push_back({r.at("id").get<std::string>(), r.at("label").get<int>(),
                         r.at("score").get<double>(),
                         r.at("distance").get<double>(),
                         r.at("flagged").get<bool>()});
  return a;
}

DatasetManifest resample_dataset(const DatasetManifest& train_manifest,
                                 const std::vector<std::string>& flagged_ids,
                                 const std::string& out_dir) {
  train_manifest.validate();
  const fs::path aug_dir = fs::path(out_dir) / "augmented";
  if (!flagged_ids.empty()) fs::create_directories(aug_dir);

  DatasetManifest out = train_manifest;
  static const char* kSuffix[3] = {"flip", "crop_left", "crop_right"};
  static const SampleOrigin kOrigin[3] = {SampleOrigin::kAugmentedFlip,
                                          SampleOrigin::kAugmentedCropLeft,
                                          SampleOrigin::kAugmentedCropRight};
  for (const auto& id : flagged_ids) {
    const SampleRecord* parent = train_manifest.find(id);
    if (!parent) throw DomainError("resample: unknown flagged id " + id);
    const auto variants = augment_sample(decode_and_preprocess(*parent));
    for (int v = 0; v < 3; ++v) {
      const std::string child_id = id + "-" + kSuffix[v];
      const fs::path file = aug_dir / (child_id + ".png");
      save_png(tensor_to_image(variants[v]), file.string());
      SampleRecord rec;
      rec.id = child_id;
      rec.path = file.string();
      rec.label = parent->label;
      rec.group = parent->group;
      rec.origin = kOrigin[v];
      rec.parent_id = id;
      out.samples.push_back(std::move(rec));
    }
  }
  return out;
}

namespace {

void log_stage(std::ofstream& log, const std::string& stage,
               const std::string& status, const std::string& detail = "") {
  ordered_json e;
  e["stage"] = stage;
  e["status"] = status;
  if (!detail.empty()) e["detail"] = detail;
  log << e.dump() << "\n";
  log.flush();
}

}  // namespace

SbrRunResult run_sbr_pipeline(const DatasetManifest& train_manifest,
                              const DatasetManifest& val_manifest,
                              const TrainConfig& train_cfg,
                              const SbrConfig& sbr_cfg,
                              const std::string& run_dir) {
  train_cfg.validate();
  sbr_cfg.validate();
  fs::create_directories(run_dir);
  const fs::path root(run_dir);
  std::ofstream log(root / "run.log", std::ios::binary);
  SbrRunResult res;

  const fs::path baseline_path = root / "baseline.ckpt";
  if (fs::exists(baseline_path)) {
    res.baseline = load_cnn_checkpoint(baseline_path.string());
    log_stage(log, "train-baseline", "resumed");
  } else {
    res.baseline = train_cnn(train_manifest, val_manifest, train_cfg);
    save_checkpoint(res.baseline, baseline_path.string());
    log_stage(log, "train-baseline", "done",
              "epochs=" + std::to_string(res.baseline.final_epoch));
  }

  const fs::path audit_path = root / "audit.json";
  if (fs::exists(audit_path)) {
    res.audit = load_audit(audit_path.string());
    log_stage(log, "audit", "resumed");
  } else {
    res.audit = audit_scores(res.baseline, train_manifest, sbr_cfg);
    save_audit(res.audit, audit_path.string());
    log_stage(log, "audit", "done");
  }

  const auto flagged = flag_underrepresented(res.audit, sbr_cfg.threshold);
  log_stage(log, "flag", "done", "flagged=" + std::to_string(flagged.size()));

  const fs::path resampled_path = root / "resampled_manifest.json";
  if (fs::exists(resampled_path)) {
    res.resampled = load_manifest(resampled_path.string());
    log_stage(log, "resample", "resumed");
  } else {
    res.resampled = resample_dataset(train_manifest, flagged, run_dir);
    save_manifest(res.resampled, resampled_path.string());
    res.resampled = load_manifest(resampled_path.string());
    log_stage(log, "resample", "done",
              "samples=" + std::to_string(res.resampled.samples.size()));
  }

  const fs::path retrained_path = root / "retrained.ckpt";
  if (fs::exists(retrained_path)) {
    res.retrained = load_cnn_checkpoint(retrained_path.string());
    log_stage(log, "retrain", "resumed");
  } else {
    TrainConfig retrain_cfg = train_cfg;
    retrain_cfg.seed = derive_seed(train_cfg.seed, "sbr-retrain");
    res.retrained = train_cnn(res.resampled, val_manifest, retrain_cfg);
    save_checkpoint(res.retrained, retrained_path.string());
    log_stage(log, "retrain", "done",
              "epochs=" + std::to_string(res.retrained.final_epoch));
  }
  return res;
}

}  // namespace sbr
