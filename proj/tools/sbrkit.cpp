#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sbr/audit.hpp"
#include "sbr/dbvae.hpp"
#include "sbr/report.hpp"
#include "sbr/svm.hpp"
#include "sbr/synth.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace sbr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitPartial = 2;

void log_json(const ordered_json& j) { std::cout << j.dump() << "\n"; }

void human(const std::string& msg) { std::cerr << msg << "\n"; }

std::string default_out_root() {
  if (const char* env = std::getenv("SBRKIT_OUT_ROOT")) return env;
  return ".";
}

// Flags beat the config file; the config file beats built-in defaults.
struct ConfigSource {
  ordered_json j = ordered_json::object();

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object())
      throw ConfigError("config file " + path + " must hold a JSON object");
  }

  template <class T>
  void apply(const CLI::Option* opt, const std::string& section,
             const std::string& key, T& value) const {
    if (opt && opt->count() > 0) return;  // explicit flag wins
    auto sec = j.find(section);
    if (sec == j.end()) return;
    auto item = sec->find(key);
    if (item == sec->end()) return;
    try {
      value = item->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config entry " + section + "." + key +
                        " has the wrong type");
    }
  }
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// The fully resolved configuration lands in the run directory before any
// work starts, so every artifact can be traced to its inputs.
void echo_config(const fs::path& out_dir, const ordered_json& resolved) {
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", resolved.dump(2) + "\n");
}

ordered_json train_config_json(const TrainConfig& tc) {
  return {{"batch_size", tc.batch_size},
          {"max_epochs", tc.max_epochs},
          {"learning_rate", tc.optimizer.learning_rate},
          {"early_stop_patience", tc.early_stop_patience},
          {"seed", tc.seed},
          {"training_temperature", tc.training_temperature}};
}

struct TrainFlags {
  CLI::Option* batch = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* patience = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* temperature = nullptr;
};

TrainFlags add_train_flags(CLI::App* cmd, TrainConfig& tc) {
  TrainFlags f;
  f.batch = cmd->add_option("--batch-size", tc.batch_size, "Mini-batch size");
  f.epochs = cmd->add_option("--epochs", tc.max_epochs, "Epoch cap");
  f.lr = cmd->add_option("--learning-rate", tc.optimizer.learning_rate,
                         "Adam learning rate");
  f.patience = cmd->add_option("--patience", tc.early_stop_patience,
                               "Early-stop patience (epochs)");
  f.seed = cmd->add_option("--seed", tc.seed, "Run seed");
  f.temperature = cmd->add_option("--train-temperature", tc.training_temperature,
                                  "Sigmoid temperature during training");
  return f;
}

void merge_train_flags(const ConfigSource& cfg, const TrainFlags& f,
                       TrainConfig& tc) {
  cfg.apply(f.batch, "train", "batch_size", tc.batch_size);
  cfg.apply(f.epochs, "train", "max_epochs", tc.max_epochs);
  cfg.apply(f.lr, "train", "learning_rate", tc.optimizer.learning_rate);
  cfg.apply(f.patience, "train", "early_stop_patience", tc.early_stop_patience);
  cfg.apply(f.seed, "train", "seed", tc.seed);
  cfg.apply(f.temperature, "train", "training_temperature",
            tc.training_temperature);
}

// Drops records whose image cannot be decoded, reporting each one. The
// caller turns a non-empty drop list into exit status 2.
DatasetManifest filter_decodable(const DatasetManifest& m,
                                 std::size_t& dropped) {
  DatasetManifest keep;
  keep.version = m.version;
  keep.class_names = m.class_names;
  for (const auto& s : m.samples) {
    try {
      decode_and_preprocess(s);
      keep.samples.push_back(s);
    } catch (const IoError& e) {
      ++dropped;
      log_json({{"event", "sample-skipped"}, {"id", s.id}, {"reason", e.what()}});
      human("warning: skipping sample " + s.id + ": " + e.what());
    }
  }
  if (keep.samples.empty())
    throw IoError("no decodable samples left in the manifest");
  return keep;
}

std::vector<PredictionRow> rows_from_scores(
    const std::vector<ScoredSample>& scores, const DatasetManifest& m,
    double decision_threshold = 0.5) {
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto* rec = m.find(scores[i].id);
    rows.push_back({scores[i].id, scores[i].label,
                    rec && rec->group ? *rec->group : "", scores[i].score,
                    scores[i].score >= decision_threshold ? 1 : 0});
  }
  return rows;
}

// ---- subcommands ----

int cmd_synth(const std::string& config_path, std::string out_dir,
              SynthConfig sc, const CLI::Option* o_n, const CLI::Option* o_frac,
              const CLI::Option* o_size, const CLI::Option* o_seed,
              const CLI::Option* o_occ_maj, const CLI::Option* o_occ_min,
              const CLI::Option* o_noise) {
  ConfigSource cfg;
  if (!config_path.empty()) cfg.load(config_path);
  cfg.apply(o_n, "synth", "n_per_class", sc.n_per_class);
  cfg.apply(o_frac, "synth", "minority_fraction", sc.minority_fraction);
  cfg.apply(o_size, "synth", "image_size", sc.image_size);
  cfg.apply(o_seed, "synth", "seed", sc.seed);
  cfg.apply(o_occ_maj, "synth", "occlusion_probability_majority",
            sc.occlusion_probability_majority);
  cfg.apply(o_occ_min, "synth", "occlusion_probability_minority",
            sc.occlusion_probability_minority);
  cfg.apply(o_noise, "synth", "noise_level", sc.noise_level);
  sc.validate();

  echo_config(out_dir, {{"command", "synth"},
                        {"out", out_dir},
                        {"synth",
                         {{"n_per_class", sc.n_per_class},
                          {"minority_fraction", sc.minority_fraction},
                          {"image_size", sc.image_size},
                          {"seed", sc.seed},
                          {"occlusion_probability_majority",
                           sc.occlusion_probability_majority},
                          {"occlusion_probability_minority",
                           sc.occlusion_probability_minority},
                          {"noise_level", sc.noise_level}}}});
  auto m = generate_synthetic(sc, out_dir);
  log_json({{"event", "synth-done"},
            {"samples", m.samples.size()},
            {"manifest", (fs::path(out_dir) / "manifest.json").string()}});
  human("generated " + std::to_string(m.samples.size()) + " images under " +
        out_dir);
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& val_manifest_path, double val_fraction,
              std::string out_dir, TrainConfig tc, const TrainFlags& flags) {
  ConfigSource cfg;
  if (!config_path.empty()) cfg.load(config_path);
  merge_train_flags(cfg, flags, tc);
  tc.validate();

  auto m = load_manifest(manifest_path);
  DatasetManifest train_m, val_m;
  if (!val_manifest_path.empty()) {
    train_m = m;
    val_m = load_manifest(val_manifest_path);
  } else {
    std::tie(train_m, val_m) =
        split(m, 1.0 - val_fraction, val_fraction, derive_seed(tc.seed, "split"));
  }

  echo_config(out_dir, {{"command", "train"},
                        {"manifest", manifest_path},
                        {"val_manifest", val_manifest_path},
                        {"val_fraction", val_fraction},
                        {"out", out_dir},
                        {"train", train_config_json(tc)}});

  auto ckpt = train_cnn(train_m, val_m, tc);
  save_checkpoint(ckpt, (fs::path(out_dir) / "model.ckpt").string());
  write_text(fs::path(out_dir) / "curves.csv",
             curves_to_csv({{"train", ckpt.history}}));
  for (const auto& e : ckpt.history)
    log_json({{"event", "epoch"},
              {"epoch", e.epoch},
              {"train_loss", e.train_loss},
              {"train_accuracy", e.train_accuracy},
              {"val_loss", e.val_loss},
              {"val_accuracy", e.val_accuracy}});
  log_json({{"event", "train-done"},
            {"checkpoint_id", ckpt.id()},
            {"epochs", ckpt.final_epoch}});
  human("trained " + std::to_string(ckpt.final_epoch) + " epochs, checkpoint " +
        ckpt.id());
  return kExitOk;
}

int cmd_audit(const std::string& config_path, const std::string& ckpt_path,
              const std::string& manifest_path, std::string out_dir,
              SbrConfig sc, const CLI::Option* o_thresh,
              const CLI::Option* o_temp) {
  ConfigSource cfg;
  if (!config_path.empty()) cfg.load(config_path);
  cfg.apply(o_thresh, "sbr", "threshold", sc.threshold);
  cfg.apply(o_temp, "sbr", "audit_temperature", sc.audit_temperature);
  sc.validate();

  auto ckpt = load_cnn_checkpoint(ckpt_path);
  auto m = load_manifest(manifest_path);
  std::size_t dropped = 0;
  auto usable = filter_decodable(m, dropped);

  echo_config(out_dir, {{"command", "audit"},
                        {"checkpoint", ckpt_path},
                        {"manifest", manifest_path},
                        {"out", out_dir},
                        {"sbr",
                         {{"threshold", sc.threshold},
                          {"audit_temperature", sc.audit_temperature}}}});

  auto audit = audit_scores(ckpt, usable, sc);
  save_audit(audit, (fs::path(out_dir) / "audit.json").string());

  std::vector<ScoredSample> scores;
  std::size_t flagged = 0;
  for (const auto& r : audit.records) {
    scores.push_back({r.id, r.label, r.score});
    flagged += r.flagged;
  }
  write_text(fs::path(out_dir) / "histogram.svg",
             histogram_to_svg(score_histogram(scores), sc.threshold));

  log_json({{"event", "audit-done"},
            {"samples", audit.records.size()},
            {"flagged", flagged},
            {"skipped", dropped}});
  human("audited " + std::to_string(audit.records.size()) + " samples, flagged " +
        std::to_string(flagged));
  return dropped ? kExitPartial : kExitOk;
}

int cmd_resample(const std::string& manifest_path, const std::string& audit_path,
                 std::string out_dir) {
  auto m = load_manifest(manifest_path);
  auto audit = load_audit(audit_path);
  echo_config(out_dir, {{"command", "resample"},
                        {"manifest", manifest_path},
                        {"audit", audit_path},
                        {"out", out_dir},
                        {"sbr",
                         {{"threshold", audit.config.threshold},
                          {"audit_temperature", audit.config.audit_temperature}}}});
  auto flagged = flag_underrepresented(audit, audit.config.threshold);
  auto resampled = resample_dataset(m, flagged, out_dir);
  save_manifest(resampled,
                (fs::path(out_dir) / "resampled_manifest.json").string());
  log_json({{"event", "resample-done"},
            {"original", m.samples.size()},
            {"flagged", flagged.size()},
            {"resampled", resampled.samples.size()}});
  human("resampled " + std::to_string(m.samples.size()) + " -> " +
        std::to_string(resampled.samples.size()) + " samples");
  return kExitOk;
}

int cmd_dbvae_train(const std::string& config_path,
                    const std::string& manifest_path,
                    const std::string& val_manifest_path, double val_fraction,
                    std::string out_dir, VaeConfig vc, TrainConfig tc,
                    const TrainFlags& flags, const CLI::Option* o_latent,
                    const CLI::Option* o_kl, const CLI::Option* o_bins,
                    const CLI::Option* o_alpha, const CLI::Option* o_indicator,
                    const CLI::Option* o_no_resample) {
  ConfigSource cfg;
  if (!config_path.empty()) cfg.load(config_path);
  merge_train_flags(cfg, flags, tc);
  cfg.apply(o_latent, "vae", "latent_dim", vc.latent_dim);
  cfg.apply(o_kl, "vae", "kl_coefficient", vc.kl_coefficient);
  cfg.apply(o_bins, "vae", "histogram_bins", vc.histogram_bins);
  cfg.apply(o_alpha, "vae", "smoothing_alpha", vc.smoothing_alpha);
  cfg.apply(o_indicator, "vae", "indicator_label", vc.indicator_label);
  cfg.apply(o_no_resample, "vae", "resampling_enabled", vc.resampling_enabled);
  tc.validate();
  vc.validate();

  auto m = load_manifest(manifest_path);
  DatasetManifest train_m, val_m;
  if (!val_manifest_path.empty()) {
    train_m = m;
    val_m = load_manifest(val_manifest_path);
  } else {
    std::tie(train_m, val_m) =
        split(m, 1.0 - val_fraction, val_fraction, derive_seed(tc.seed, "split"));
  }

  echo_config(out_dir,
              {{"command", "dbvae-train"},
               {"manifest", manifest_path},
               {"out", out_dir},
               {"train", train_config_json(tc)},
               {"vae",
                {{"latent_dim", vc.latent_dim},
                 {"kl_coefficient", vc.kl_coefficient},
                 {"histogram_bins", vc.histogram_bins},
                 {"smoothing_alpha", vc.smoothing_alpha},
                 {"indicator_label", vc.indicator_label},
                 {"resampling_enabled", vc.resampling_enabled}}}});

  auto res = train_dbvae(train_m, val_m, vc, tc);
  save_checkpoint(res.checkpoint, (fs::path(out_dir) / "dbvae.ckpt").string());
  save_latent_stats(res.per_epoch_stats,
                    (fs::path(out_dir) / "latent_stats.json").string());
  for (const auto& e : res.checkpoint.history)
    log_json({{"event", "epoch"},
              {"epoch", e.epoch},
              {"total_loss", e.total_loss},
              {"class_loss", e.class_loss},
              {"recon_loss", e.recon_loss},
              {"kl_loss", e.kl_loss},
              {"train_accuracy", e.train_accuracy}});
  log_json({{"event", "dbvae-train-done"},
            {"checkpoint_id", res.checkpoint.id()},
            {"epochs", res.checkpoint.final_epoch}});
  human("DB-VAE trained " + std::to_string(res.checkpoint.final_epoch) +
        " epochs, checkpoint " + res.checkpoint.id());
  return kExitOk;
}

int cmd_svm_fit(const std::string& config_path, const std::string& ckpt_path,
                const std::string& manifest_path, std::string out_dir,
                double gamma, double C, bool grid, int folds,
                std::uint64_t seed, double temperature,
                const CLI::Option* o_gamma, const CLI::Option* o_c,
                const CLI::Option* o_folds, const CLI::Option* o_seed,
                const CLI::Option* o_temp) {
  ConfigSource cfg;
  if (!config_path.empty()) cfg.load(config_path);
  cfg.apply(o_gamma, "svm", "gamma", gamma);
  cfg.apply(o_c, "svm", "C", C);
  cfg.apply(o_folds, "svm", "folds", folds);
  cfg.apply(o_seed, "svm", "seed", seed);
  cfg.apply(o_temp, "svm", "temperature", temperature);
  if (grid && (o_gamma->count() > 0 || o_c->count() > 0))
    throw ConfigError(
        "--grid-search conflicts with fixed --gamma/--C; pick one mode");

  auto ckpt = load_cnn_checkpoint(ckpt_path);
  auto m = load_manifest(manifest_path);
  std::size_t dropped = 0;
  auto usable = filter_decodable(m, dropped);

  echo_config(out_dir, {{"command", "svm-fit"},
                        {"checkpoint", ckpt_path},
                        {"manifest", manifest_path},
                        {"out", out_dir},
                        {"svm",
                         {{"gamma", gamma},
                          {"C", C},
                          {"grid_search", grid},
                          {"folds", folds},
                          {"seed", seed},
                          {"temperature", temperature}}}});

  auto scores = predict_scores(ckpt, usable, TemperatureConfig{temperature});
  std::vector<double> feats;
  std::vector<int> labels01, labels_pm;
  for (const auto& s : scores) {
    feats.push_back(s.score);
    labels01.push_back(s.label);
    labels_pm.push_back(s.label == 1 ? 1 : -1);
  }

  GridSearchResult cv;
  const GridSearchResult* cv_ptr = nullptr;
  if (grid) {
    GridSearchSpec spec;
    spec.folds = folds;
    spec.seed = seed;
    cv = grid_search_cv(feats, labels01, spec);
    gamma = cv.best_gamma;
    C = cv.best_C;
    cv_ptr = &cv;
    log_json({{"event", "grid-search-done"},
              {"best_gamma", gamma},
              {"best_C", C}});
  }

  auto svm = smo_train(feats, labels_pm, gamma, C, 1e-3, seed);
  svm.source_checkpoint_id = ckpt.id();
  save_svm(svm, (fs::path(out_dir) / "svm.json").string(), cv_ptr);
  log_json({{"event", "svm-fit-done"},
            {"gamma", gamma},
            {"C", C},
            {"support_vectors", svm.support.size()},
            {"skipped", dropped}});
  human("SVM fit with gamma=" + std::to_string(gamma) + " C=" +
        std::to_string(C) + " on " + std::to_string(feats.size()) + " scores");
  return dropped ? kExitPartial : kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path,
             const std::string& svm_path, std::string out_dir,
             double temperature, bool allow_mismatch) {
  auto ckpt = load_cnn_checkpoint(ckpt_path);
  auto m = load_manifest(manifest_path);
  std::size_t dropped = 0;
  auto usable = filter_decodable(m, dropped);

  echo_config(out_dir, {{"command", "eval"},
                        {"checkpoint", ckpt_path},
                        {"manifest", manifest_path},
                        {"svm", svm_path},
                        {"out", out_dir},
                        {"temperature", temperature}});

  std::vector<PredictionRow> rows;
  std::string method = "cnn";
  if (!svm_path.empty()) {
    method = "cnn+svm";
    auto svm = load_svm(svm_path);
    auto preds = cnn_svm_predict(ckpt, svm, usable, temperature, allow_mismatch);
    for (const auto& p : preds) {
      const auto* rec = usable.find(p.id);
      rows.push_back({p.id, p.label, rec && rec->group ? *rec->group : "",
                      p.score, p.predicted});
    }
  } else {
    auto scores = predict_scores(ckpt, usable, TemperatureConfig{temperature});
    rows = rows_from_scores(scores, usable);
  }

  write_text(fs::path(out_dir) / "predictions.csv", predictions_to_csv(rows));

  MethodPredictions mp{method, {}};
  for (const auto& r : rows) mp.predicted[r.id] = r.predicted;
  auto table = group_accuracy_table({mp}, usable);
  write_text(fs::path(out_dir) / "report.csv", table_to_csv(table));
  write_text(fs::path(out_dir) / "report.json", table_to_json(table));

  log_json({{"event", "eval-done"},
            {"method", method},
            {"samples", rows.size()},
            {"overall_accuracy", table.cells[0][0].acc},
            {"skipped", dropped}});
  human(method + " overall accuracy " + std::to_string(table.cells[0][0].acc) +
        " on " + std::to_string(rows.size()) + " samples");
  return dropped ? kExitPartial : kExitOk;
}

int cmd_compare(const std::string& manifest_path,
                const std::vector<std::string>& prediction_specs,
                std::string out_dir) {
  auto m = load_manifest(manifest_path);
  if (prediction_specs.empty())
    throw ConfigError("compare needs at least one --predictions name=path");

  echo_config(out_dir, {{"command", "compare"},
                        {"manifest", manifest_path},
                        {"predictions", prediction_specs},
                        {"out", out_dir}});

  std::vector<MethodPredictions> methods;
  for (const auto& spec : prediction_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
      throw ConfigError("--predictions expects name=path, got: " + spec);
    const std::string name = spec.substr(0, eq);
    const std::string path = spec.substr(eq + 1);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("predictions file not found: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    MethodPredictions mp{name, {}};
    for (const auto& r : predictions_from_csv(text)) mp.predicted[r.id] = r.predicted;
    methods.push_back(std::move(mp));
  }

  auto table = group_accuracy_table(methods, m);
  write_text(fs::path(out_dir) / "report.csv", table_to_csv(table));
  write_text(fs::path(out_dir) / "report.json", table_to_json(table));
  log_json({{"event", "compare-done"},
            {"methods", methods.size()},
            {"rows", table.rows.size()}});
  human("compared " + std::to_string(methods.size()) + " methods over " +
        std::to_string(table.rows.size()) + " rows");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset bias mitigation toolkit: score-based resampling, a "
               "DB-VAE baseline, and a CNN+SVM evaluation head"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON config file (flags override its values)")
      ->configurable(false);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a biased synthetic dataset");
  SynthConfig sc;
  std::string synth_out = default_out_root() + "/synth";
  synth->add_option("--out", synth_out, "Output directory");
  auto* o_n = synth->add_option("--n-per-class", sc.n_per_class);
  auto* o_frac = synth->add_option("--minority-fraction", sc.minority_fraction);
  auto* o_size = synth->add_option("--image-size", sc.image_size);
  auto* o_sseed = synth->add_option("--seed", sc.seed);
  auto* o_occ_maj =
      synth->add_option("--occlusion-majority", sc.occlusion_probability_majority);
  auto* o_occ_min =
      synth->add_option("--occlusion-minority", sc.occlusion_probability_minority);
  auto* o_noise = synth->add_option("--noise", sc.noise_level);

  // train
  auto* train = app.add_subcommand("train", "Train the CNN classifier");
  std::string train_manifest, train_val_manifest;
  double train_val_fraction = 0.2;
  std::string train_out = default_out_root() + "/train";
  train->add_option("--manifest", train_manifest, "Training manifest")->required();
  train->add_option("--val-manifest", train_val_manifest,
                    "Validation manifest (otherwise split off --val-fraction)");
  train->add_option("--val-fraction", train_val_fraction,
                    "Validation fraction when no --val-manifest is given");
  train->add_option("--out", train_out, "Output directory");
  TrainConfig train_tc;
  TrainFlags train_flags = add_train_flags(train, train_tc);

  // audit
  auto* audit = app.add_subcommand("audit", "Score a model on its training set");
  std::string audit_ckpt, audit_manifest;
  std::string audit_out = default_out_root() + "/audit";
  SbrConfig audit_sc;
  audit->add_option("--checkpoint", audit_ckpt, "CNN checkpoint")->required();
  audit->add_option("--manifest", audit_manifest, "Manifest to audit")->required();
  audit->add_option("--out", audit_out, "Output directory");
  auto* o_thresh = audit->add_option("--threshold", audit_sc.threshold,
                                     "Flagging distance threshold");
  auto* o_temp = audit->add_option("--temperature", audit_sc.audit_temperature,
                                   "Audit sigmoid temperature");

  // resample
  auto* resample =
      app.add_subcommand("resample", "Augment flagged samples into a new manifest");
  std::string res_manifest, res_audit;
  std::string res_out = default_out_root() + "/resample";
  resample->add_option("--manifest", res_manifest, "Original training manifest")
      ->required();
  resample->add_option("--audit", res_audit, "Audit JSON")->required();
  resample->add_option("--out", res_out, "Output directory");

  // dbvae-train
  auto* dbvae = app.add_subcommand("dbvae-train", "Train the DB-VAE baseline");
  std::string dbvae_manifest, dbvae_val_manifest;
  double dbvae_val_fraction = 0.2;
  std::string dbvae_out = default_out_root() + "/dbvae";
  VaeConfig vc;
  bool vae_no_resample = false;
  dbvae->add_option("--manifest", dbvae_manifest, "Training manifest")->required();
  dbvae->add_option("--val-manifest", dbvae_val_manifest, "Validation manifest");
  dbvae->add_option("--val-fraction", dbvae_val_fraction, "Validation fraction");
  dbvae->add_option("--out", dbvae_out, "Output directory");
  TrainConfig dbvae_tc;
  TrainFlags dbvae_flags = add_train_flags(dbvae, dbvae_tc);
  auto* o_latent = dbvae->add_option("--latent-dim", vc.latent_dim);
  auto* o_kl = dbvae->add_option("--kl-coefficient", vc.kl_coefficient);
  auto* o_bins = dbvae->add_option("--histogram-bins", vc.histogram_bins);
  auto* o_alpha = dbvae->add_option("--smoothing-alpha", vc.smoothing_alpha);
  auto* o_indicator = dbvae->add_option("--indicator-label", vc.indicator_label,
                                        "-1 all, 0/1 single class");
  auto* o_no_resample = dbvae->add_flag("--no-resampling", vae_no_resample,
                                        "Disable adaptive batch resampling");

  // svm-fit
  auto* svmfit = app.add_subcommand("svm-fit", "Fit the RBF-SVM head on CNN scores");
  std::string svm_ckpt, svm_manifest;
  std::string svm_out = default_out_root() + "/svm";
  double svm_gamma = 0.5, svm_C = 10.0, svm_temp = 0.85;
  bool svm_grid = false;
  int svm_folds = 5;
  std::uint64_t svm_seed = 0;
  svmfit->add_option("--checkpoint", svm_ckpt, "CNN checkpoint")->required();
  svmfit->add_option("--manifest", svm_manifest, "Manifest to score")->required();
  svmfit->add_option("--out", svm_out, "Output directory");
  auto* o_gamma = svmfit->add_option("--gamma", svm_gamma, "RBF width");
  auto* o_c = svmfit->add_option("--C", svm_C, "Box constraint");
  svmfit->add_flag("--grid-search", svm_grid,
                   "Pick gamma and C by stratified cross-validation");
  auto* o_folds = svmfit->add_option("--folds", svm_folds, "CV folds");
  auto* o_svm_seed = svmfit->add_option("--seed", svm_seed, "Solver/CV seed");
  auto* o_svm_temp =
      svmfit->add_option("--temperature", svm_temp, "Scoring temperature");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a manifest");
  std::string eval_ckpt, eval_manifest, eval_svm;
  std::string eval_out = default_out_root() + "/eval";
  double eval_temp = 0.85;
  bool eval_allow_mismatch = false;
  eval->add_option("--checkpoint", eval_ckpt, "CNN checkpoint")->required();
  eval->add_option("--manifest", eval_manifest, "Evaluation manifest")->required();
  eval->add_option("--svm", eval_svm, "Optional SVM head model");
  eval->add_option("--out", eval_out, "Output directory");
  eval->add_option("--temperature", eval_temp, "Scoring temperature");
  eval->add_flag("--allow-checkpoint-mismatch", eval_allow_mismatch,
                 "Use an SVM head trained against a different checkpoint");

  // compare
  auto* compare =
      app.add_subcommand("compare", "Group-accuracy table across methods");
  std::string cmp_manifest;
  std::string cmp_out = default_out_root() + "/compare";
  std::vector<std::string> cmp_preds;
  compare->add_option("--manifest", cmp_manifest, "Manifest with group tags")
      ->required();
  compare->add_option("--predictions", cmp_preds,
                      "Repeatable name=predictions.csv pair");
  compare->add_option("--out", cmp_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitFatal;
  }

  try {
    if (*synth)
      return cmd_synth(config_path, synth_out, sc, o_n, o_frac, o_size, o_sseed,
                       o_occ_maj, o_occ_min, o_noise);
    if (*train)
      return cmd_train(config_path, train_manifest, train_val_manifest,
                       train_val_fraction, train_out, train_tc, train_flags);
    if (*audit)
      return cmd_audit(config_path, audit_ckpt, audit_manifest, audit_out,
                       audit_sc, o_thresh, o_temp);
    if (*resample) return cmd_resample(res_manifest, res_audit, res_out);
    if (*dbvae) {
      if (vae_no_resample) vc.resampling_enabled = false;
      return cmd_dbvae_train(config_path, dbvae_manifest, dbvae_val_manifest,
                             dbvae_val_fraction, dbvae_out, vc, dbvae_tc,
                             dbvae_flags, o_latent, o_kl, o_bins, o_alpha,
                             o_indicator, o_no_resample);
    }
    if (*svmfit)
      return cmd_svm_fit(config_path, svm_ckpt, svm_manifest, svm_out, svm_gamma,
                         svm_C, svm_grid, svm_folds, svm_seed, svm_temp, o_gamma,
                         o_c, o_folds, o_svm_seed, o_svm_temp);
    if (*eval)
      return cmd_eval(eval_ckpt, eval_manifest, eval_svm, eval_out, eval_temp,
                      eval_allow_mismatch);
    if (*compare) return cmd_compare(cmp_manifest, cmp_preds, cmp_out);
  } catch (const ConfigError& e) {
    human(std::string("config error: ") + e.what());
    return kExitFatal;
  } catch (const UsageError& e) {
    human(std::string("usage error: ") + e.what());
    return kExitFatal;
  } catch (const std::exception& e) {
    human(std::string("error: ") + e.what());
    return kExitFatal;
  }
  return kExitFatal;
}
