#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sbr/audit.hpp"
#include "sbr/synth.hpp"

using namespace sbr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("sbr-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DatasetManifest tiny_dataset(const fs::path& dir, int per_class,
                             std::uint64_t seed) {
  fs::create_directories(dir / "images");
  Rng rng(seed);
  DatasetManifest m;
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < per_class; ++i) {
      Image img = Image::filled(kInputSize, kInputSize, 0);
      const float base = label ? 0.7f : 0.3f;
      for (auto& px : img.pixels)
        px = std::clamp(base + 0.12f * static_cast<float>(rng.normal()), 0.0f,
                        1.0f);
      std::string id = (label ? "pos" : "neg") + std::to_string(i);
      std::string path = (dir / "images" / (id + ".png")).string();
      save_png(img, path);
      m.samples.push_back({id, path, label,
                           std::string(i % 3 == 0 ? "g1" : "g0"),
                           SampleOrigin::kOriginal, std::nullopt});
    }
  }
  return m;
}

ScoreAudit synthetic_audit(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
  ScoreAudit a;
  a.checkpoint_id = "deadbeef";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    AuditRecord r;
    r.id = "s" + std::to_string(i);
    r.label = labels[i];
    r.score = scores[i];
    r.distance = std::abs(scores[i] - labels[i]);
    r.flagged = r.distance > a.config.threshold;
    a.records.push_back(r);
  }
  return a;
}

}  // namespace

TEST_CASE("distance and flagging closed forms") {
  // a confident correct score keeps a sample; an uncertain one flags it
  auto a = synthetic_audit({0.9999, 0.75, 0.0001, 0.25}, {1, 1, 0, 0});
  CHECK(a.records[0].distance == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK_FALSE(a.records[0].flagged);
  CHECK(a.records[1].distance == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(a.records[1].flagged);
  CHECK(a.records[2].distance == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(a.records[3].distance == doctest::Approx(0.25).epsilon(1e-12));

  auto flagged = flag_underrepresented(a, 0.15);
  REQUIRE(flagged.size() == 2);
  CHECK(flagged[0] == "s1");
  CHECK(flagged[1] == "s3");
}

TEST_CASE("threshold boundary is strict") {
  // distances exactly at the threshold must not be flagged; label-0 samples
  // make the distance bit-identical to the score
  auto a = synthetic_audit({0.15, 0.1499999, 0.15000001}, {0, 0, 0});
  CHECK(a.records[0].distance == 0.15);
  auto flagged = flag_underrepresented(a, 0.15);
  REQUIRE(flagged.size() == 1);
  CHECK(flagged[0] == "s2");
}

TEST_CASE("sbr config validation") {
  SbrConfig ok;
  ok.validate();
  SbrConfig bad;
  bad.threshold = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  SbrConfig bad2;
  bad2.threshold = 1.5;
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
  SbrConfig bad3;
  bad3.audit_temperature = 0.0;
  CHECK_THROWS_AS(bad3.validate(), ConfigError);
}

TEST_CASE("audit_scores uses the audit temperature and preserves order") {
  auto dir = temp_dir("audit");
  auto m = tiny_dataset(dir, 5, 1);
  CnnCheckpoint ckpt;
  ckpt.model = build_cnn(CnnArchitecture{}, 3);

  SbrConfig cfg;
  auto audit = audit_scores(ckpt, m, cfg);
  REQUIRE(audit.records.size() == m.samples.size());
  CHECK(audit.checkpoint_id == ckpt.id());
  auto scores = predict_scores(ckpt, m, TemperatureConfig{cfg.audit_temperature});
  for (std::size_t i = 0; i < audit.records.size(); ++i) {
    CHECK(audit.records[i].id == m.samples[i].id);
    CHECK(audit.records[i].score == doctest::Approx(scores[i].score).epsilon(1e-12));
    CHECK(audit.records[i].distance ==
          doctest::Approx(std::abs(scores[i].score - m.samples[i].label))
              .epsilon(1e-12));
    CHECK(audit.records[i].flagged == (audit.records[i].distance > 0.15));
  }

  // temperature matters: T=1 scores differ from T=0.85 scores somewhere
  auto t1 = predict_scores(ckpt, m, TemperatureConfig{1.0});
  bool any_diff = false;
  for (std::size_t i = 0; i < t1.size(); ++i)
    any_diff = any_diff || std::abs(t1[i].score - scores[i].score) > 1e-12;
  CHECK(any_diff);
}

TEST_CASE("audit json round trip keeps 9 significant digits") {
  auto dir = temp_dir("auditjson");
  auto a = synthetic_audit({0.123456789123, 0.5, 1.0 / 3.0}, {0, 1, 1});
  const std::string path = (dir / "audit.json").string();
  save_audit(a, path);
  auto back = load_audit(path);
  REQUIRE(back.records.size() == 3);
  CHECK(back.checkpoint_id == "deadbeef");
  CHECK(back.config.threshold == a.config.threshold);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.records[i].id == a.records[i].id);
    CHECK(std::abs(back.records[i].score - a.records[i].score) < 1e-8);
    CHECK(back.records[i].flagged == a.records[i].flagged);
  }
  // second save of the loaded audit is byte-identical (stable rounding)
  const std::string path2 = (dir / "audit2.json").string();
  save_audit(back, path2);
  std::ifstream f1(path), f2(path2);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
}

TEST_CASE("resample_dataset appends exactly 3 children per flagged id") {
  auto dir = temp_dir("resample");
  auto m = tiny_dataset(dir, 4, 2);
  std::vector<std::string> flagged = {"neg1", "pos2"};
  auto out = resample_dataset(m, flagged, (dir / "run").string());
  CHECK(out.samples.size() == m.samples.size() + 3 * flagged.size());

  // originals all present and first, in order
  for (std::size_t i = 0; i < m.samples.size(); ++i)
    CHECK(out.samples[i].id == m.samples[i].id);

  for (const auto& fid : flagged) {
    const auto* parent = out.find(fid);
    REQUIRE(parent != nullptr);
    const auto* flip = out.find(fid + "-flip");
    const auto* cl = out.find(fid + "-crop_left");
    const auto* cr = out.find(fid + "-crop_right");
    REQUIRE(flip != nullptr);
    REQUIRE(cl != nullptr);
    REQUIRE(cr != nullptr);
    CHECK(flip->origin == SampleOrigin::kAugmentedFlip);
    CHECK(cl->origin == SampleOrigin::kAugmentedCropLeft);
    CHECK(cr->origin == SampleOrigin::kAugmentedCropRight);
    for (const auto* child : {flip, cl, cr}) {
      CHECK(child->label == parent->label);
      CHECK(child->group == parent->group);
      CHECK(child->parent_id == fid);
      CHECK(fs::exists(child->path));
    }
    // flip image content matches augment_sample's first output
    auto parent_img = decode_and_preprocess(*parent);
    auto expect = augment_sample(parent_img);
    auto flip_img = decode_and_preprocess(*flip);
    CHECK((flip_img.values() - expect[0].values()).abs().maxCoeff() < 2.0f / 255);
  }
  out.validate();

  CHECK_THROWS_AS(resample_dataset(m, {"ghost"}, (dir / "run2").string()),
                  DomainError);

  // empty flag list is a no-op copy
  auto none = resample_dataset(m, {}, (dir / "run3").string());
  CHECK(none.samples.size() == m.samples.size());
}

TEST_CASE("full pipeline: artifacts, determinism, resumability") {
  auto data_dir = temp_dir("pipe-data");
  auto m = tiny_dataset(data_dir, 10, 3);
  auto [train_m, val_m] = split(m, 0.8, 0.2, 5);

  TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch_size = 8;
  tc.seed = 9;
  tc.optimizer.learning_rate = 1e-3f;
  SbrConfig sc;

  auto run1 = temp_dir("pipe-run1");
  auto r = run_sbr_pipeline(train_m, val_m, tc, sc, run1.string());

  CHECK(fs::exists(run1 / "baseline.ckpt"));
  CHECK(fs::exists(run1 / "audit.json"));
  CHECK(fs::exists(run1 / "resampled_manifest.json"));
  CHECK(fs::exists(run1 / "retrained.ckpt"));
  CHECK(fs::exists(run1 / "run.log"));

  std::size_t n_flagged = 0;
  for (const auto& rec : r.audit.records) n_flagged += rec.flagged;
  CHECK(r.resampled.samples.size() == train_m.samples.size() + 3 * n_flagged);
  CHECK(r.audit.checkpoint_id == r.baseline.id());
  CHECK(r.retrained.id() != r.baseline.id());  // fresh init, not a fine-tune

  // capture the fresh-run log before the resume rerun rewrites it
  std::string log1;
  {
    std::ifstream f(run1 / "run.log");
    log1.assign(std::istreambuf_iterator<char>(f), {});
  }

  // resumability: rerun in the same dir reuses artifacts byte-for-byte
  auto before = fs::last_write_time(run1 / "baseline.ckpt");
  auto r2 = run_sbr_pipeline(train_m, val_m, tc, sc, run1.string());
  CHECK(fs::last_write_time(run1 / "baseline.ckpt") == before);
  CHECK(r2.baseline.id() == r.baseline.id());
  CHECK(r2.retrained.id() == r.retrained.id());

  // determinism: a fresh dir reproduces identical checkpoints
  auto run2 = temp_dir("pipe-run2");
  auto r3 = run_sbr_pipeline(train_m, val_m, tc, sc, run2.string());
  CHECK(r3.baseline.id() == r.baseline.id());
  CHECK(r3.retrained.id() == r.retrained.id());
  std::ifstream f2(run2 / "run.log");
  std::string log2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(log1 == log2);
  CHECK_FALSE(log1.empty());
}

TEST_CASE("resumption after a partial run completes the remaining stages") {
  auto data_dir = temp_dir("partial-data");
  auto m = tiny_dataset(data_dir, 8, 4);
  auto [train_m, val_m] = split(m, 0.75, 0.25, 6);

  TrainConfig tc;
  tc.max_epochs = 2;
  tc.batch_size = 8;
  tc.seed = 13;
  tc.optimizer.learning_rate = 1e-3f;
  SbrConfig sc;

  // stage 1 only: train a baseline into the run dir, then invoke the pipeline
  auto run_dir = temp_dir("partial-run");
  auto baseline = train_cnn(train_m, val_m, tc);
  save_checkpoint(baseline, (run_dir / "baseline.ckpt").string());

  auto r = run_sbr_pipeline(train_m, val_m, tc, sc, run_dir.string());
  CHECK(r.baseline.id() == baseline.id());  // reused, not retrained
  CHECK(fs::exists(run_dir / "retrained.ckpt"));
  CHECK(fs::exists(run_dir / "audit.json"));
}
