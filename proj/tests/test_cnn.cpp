#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sbr/cnn.hpp"
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

// Small shared dataset for training tests: separable bright/dark images.
DatasetManifest tiny_dataset(const fs::path& dir, int per_class,
                             std::uint64_t seed) {
  fs::create_directories(dir / "images");
  Rng rng(seed);
  DatasetManifest m;
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < per_class; ++i) {
      Image img = Image::filled(kInputSize, kInputSize, 0);
      const float base = label ? 0.75f : 0.25f;
      for (auto& px : img.pixels)
        px = std::clamp(base + 0.1f * static_cast<float>(rng.normal()), 0.0f,
                        1.0f);
      std::string id = (label ? "pos" : "neg") + std::to_string(i);
      std::string path = (dir / "images" / (id + ".png")).string();
      save_png(img, path);
      m.samples.push_back({id, path, label, std::nullopt, SampleOrigin::kOriginal,
                           std::nullopt});
    }
  }
  return m;
}

}  // namespace

TEST_CASE("architecture bookkeeping") {
  CnnArchitecture arch;
  // 64 -> 32 -> 16 -> 8 -> 4 under stride-2 same padding
  CHECK(arch.final_spatial() == 4);
  CHECK(arch.flatten_size() == 4 * 4 * 72);

  // hand count: conv kernels+biases, fc1, fc2
  Eigen::Index expect = 0;
  expect += 5 * 5 * 3 * 12 + 12;
  expect += 5 * 5 * 12 * 24 + 24;
  expect += 3 * 3 * 24 * 48 + 48;
  expect += 3 * 3 * 48 * 72 + 72;
  expect += 1152 * 512 + 512;
  expect += 512 * 1 + 1;
  CHECK(arch.parameter_count() == expect);
  CHECK(arch.parameter_count() == 640577);  // regression pin

  CnnArchitecture collapse;
  collapse.input_size = 0;
  CHECK_THROWS_AS(collapse.final_spatial(), ConfigError);
  CnnArchitecture badstage;
  badstage.stages = {{4, 3, 0}};
  CHECK_THROWS_AS(badstage.final_spatial(), ConfigError);
}

TEST_CASE("build_cnn init statistics and determinism") {
  CnnArchitecture arch;
  auto a = build_cnn(arch, 5);
  auto b = build_cnn(arch, 5);
  auto c = build_cnn(arch, 6);
  REQUIRE(a.params.size() == a.names.size());
  Eigen::Index total = 0;
  for (const auto& p : a.params) total += p.size();
  CHECK(total == arch.parameter_count());

  bool same = true, diff = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    same = same && (a.params[i].values() == b.params[i].values()).all();
    diff = diff || !(a.params[i].values() == c.params[i].values()).all();
  }
  CHECK(same);
  CHECK(diff);

  // conv1 kernel bound: sqrt(6 / (5*5*3 + 5*5*12))
  const auto& k1 = a.params[0];
  REQUIRE(a.names[0] == "conv0.kernel");
  const double bound = std::sqrt(6.0 / (5 * 5 * 3 + 5 * 5 * 12));
  CHECK(k1.values().abs().maxCoeff() <= bound);
  CHECK(k1.values().abs().maxCoeff() > bound * 0.8);  // actually fills the range
  // biases start at zero
  CHECK(a.params[1].values().abs().maxCoeff() == 0.0f);
}

TEST_CASE("logits shape and batch invariance") {
  CnnArchitecture arch;
  auto model = build_cnn(arch, 7);
  Rng rng(8);
  auto x3 = Tensor<float>::uniform({3, 64, 64, 3}, rng, 0.0f, 1.0f);
  auto y = model.logits(x3);
  CHECK(y.shape() == Shape{3, 1});

  // single-sample forwards agree with the batched forward
  for (int n = 0; n < 3; ++n) {
    Array<float> one = x3.values().segment(n * 64 * 64 * 3, 64 * 64 * 3);
    auto yn = model.logits(Tensor<float>({1, 64, 64, 3}, one));
    CHECK(std::abs(yn.value() - y.value(n)) < 1e-4f);
  }
  CHECK_THROWS_AS(model.logits(Tensor<float>::zeros({1, 32, 32, 3})),
                  DimensionError);
}

TEST_CASE("early stopping monitor") {
  EarlyStopMonitor mon(3);
  CHECK_FALSE(mon.observe(0.5));
  CHECK_FALSE(mon.observe(0.6));
  CHECK_FALSE(mon.observe(0.6));  // tie is not an improvement
  CHECK_FALSE(mon.observe(0.55));
  CHECK(mon.observe(0.59));  // third epoch without strict improvement
  CHECK(mon.best_epoch() == 2);
  CHECK(mon.best() == doctest::Approx(0.6));
}

TEST_CASE("checkpoint container round trip and corruption detection") {
  auto dir = temp_dir("ckpt");
  Rng rng(9);
  Checkpoint c;
  c.model_kind = "cnn";
  c.meta = {{"note", "x"}, {"epochs", 3}};
  c.tensors.emplace_back("w", Tensor<float>::uniform({4, 5}, rng, -1.0f, 1.0f));
  c.tensors.emplace_back("b", Tensor<float>::uniform({5}, rng, -1.0f, 1.0f));
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(c, path);

  auto back = load_checkpoint(path);
  CHECK(back.model_kind == "cnn");
  CHECK(back.meta.at("epochs") == 3);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensor("w").shape() == Shape{4, 5});
  CHECK((back.tensor("w").values() == c.tensor("w").values()).all());
  CHECK(checkpoint_digest(back) == checkpoint_digest(c));

  // digest is sensitive to payload changes
  Checkpoint c2 = c;
  Array<float> v = c2.tensors[0].second.values();
  v[0] += 0.25f;
  c2.tensors[0].second = Tensor<float>({4, 5}, v);
  CHECK(checkpoint_digest(c2) != checkpoint_digest(c));

  SUBCASE("flipped payload byte fails the checksum") {
    auto bytes = [&] {
      std::ifstream f(path, std::ios::binary);
      return std::vector<char>{std::istreambuf_iterator<char>(f),
                               std::istreambuf_iterator<char>()};
    }();
    bytes[bytes.size() / 2] ^= 0x40;
    const std::string bad = (dir / "bad.ckpt").string();
    std::ofstream(bad, std::ios::binary).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_checkpoint(bad), IoError);
  }
  SUBCASE("truncated file is rejected") {
    auto bytes = [&] {
      std::ifstream f(path, std::ios::binary);
      return std::vector<char>{std::istreambuf_iterator<char>(f),
                               std::istreambuf_iterator<char>()};
    }();
    const std::string bad = (dir / "trunc.ckpt").string();
    std::ofstream(bad, std::ios::binary)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
    CHECK_THROWS_AS(load_checkpoint(bad), IoError);
  }
  SUBCASE("wrong magic is rejected") {
    const std::string bad = (dir / "magic.ckpt").string();
    std::ofstream(bad, std::ios::binary) << "NOTACKPTxxxxxxxxxxxxxxxx";
    CHECK_THROWS_AS(load_checkpoint(bad), IoError);
  }
}

TEST_CASE("training learns a separable dataset and is deterministic") {
  auto dir = temp_dir("train");
  auto m = tiny_dataset(dir, 16, 21);
  auto [train_m, val_m] = split(m, 0.75, 0.25, 3);

  TrainConfig cfg;
  cfg.max_epochs = 6;
  cfg.batch_size = 8;
  cfg.seed = 77;
  cfg.optimizer.learning_rate = 1e-3f;

  auto ckpt = train_cnn(train_m, val_m, cfg);
  REQUIRE_FALSE(ckpt.history.empty());
  CHECK(ckpt.history.back().train_accuracy > 0.9);
  CHECK(ckpt.history.back().val_accuracy > 0.9);
  CHECK(ckpt.final_epoch == static_cast<int>(ckpt.history.size()));
  // loss decreased overall
  CHECK(ckpt.history.back().train_loss < ckpt.history.front().train_loss);

  // deterministic retrain: identical checkpoint id
  auto ckpt2 = train_cnn(train_m, val_m, cfg);
  CHECK(ckpt2.id() == ckpt.id());
  TrainConfig cfg3 = cfg;
  cfg3.seed = 78;
  CHECK(train_cnn(train_m, val_m, cfg3).id() != ckpt.id());

  // cnn checkpoint file round trip preserves history, config, id
  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(ckpt, path);
  auto loaded = load_cnn_checkpoint(path);
  CHECK(loaded.id() == ckpt.id());
  CHECK(loaded.history.size() == ckpt.history.size());
  CHECK(loaded.config.seed == 77);
  CHECK(loaded.history.back().val_accuracy ==
        doctest::Approx(ckpt.history.back().val_accuracy));

  // predictions survive the round trip exactly
  TemperatureConfig t{1.0};
  auto s1 = predict_scores(ckpt, val_m, t);
  auto s2 = predict_scores(loaded, val_m, t);
  REQUIRE(s1.size() == s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) {
    CHECK(s1[i].id == s2[i].id);
    CHECK(s1[i].score == s2[i].score);
    CHECK(s1[i].score >= 0.0);
    CHECK(s1[i].score <= 1.0);
  }
}

TEST_CASE("training rejects single-class data") {
  auto dir = temp_dir("oneclass");
  auto m = tiny_dataset(dir, 4, 30);
  DatasetManifest only_pos;
  for (const auto& s : m.samples)
    if (s.label == 1) only_pos.samples.push_back(s);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  CHECK_THROWS_AS(train_cnn(only_pos, only_pos, cfg), DomainError);
}

TEST_CASE("train config validation") {
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  TrainConfig bad2;
  bad2.max_epochs = -1;
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
  TrainConfig bad3;
  bad3.training_temperature = 0.0;
  CHECK_THROWS_AS(bad3.validate(), ConfigError);
}

TEST_CASE("predict_scores is batch-size independent via manifest subsets") {
  auto dir = temp_dir("pred");
  auto m = tiny_dataset(dir, 6, 40);
  CnnArchitecture arch;
  CnnCheckpoint ckpt;
  ckpt.model = build_cnn(arch, 50);
  TemperatureConfig t{0.85};
  auto all = predict_scores(ckpt, m, t);

  DatasetManifest first_three;
  first_three.samples.assign(m.samples.begin(), m.samples.begin() + 3);
  auto sub = predict_scores(ckpt, first_three, t);
  for (int i = 0; i < 3; ++i) CHECK(sub[i].score == all[i].score);
}
