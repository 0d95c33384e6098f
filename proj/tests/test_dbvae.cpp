#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sbr/dbvae.hpp"
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

DbvaeArchitecture small_arch(int latent = 6) {
  DbvaeArchitecture a;
  a.trunk.hidden_dense = 32;
  a.latent_dim = latent;
  return a;
}

}  // namespace

TEST_CASE("vae config validation") {
  VaeConfig ok;
  ok.validate();
  VaeConfig bad;
  bad.latent_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  VaeConfig bad2;
  bad2.kl_coefficient = -1.0;
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
  VaeConfig bad3;
  bad3.histogram_bins = 0;
  CHECK_THROWS_AS(bad3.validate(), ConfigError);
  VaeConfig bad4;
  bad4.smoothing_alpha = 0.0;
  CHECK_THROWS_AS(bad4.validate(), ConfigError);
  VaeConfig bad5;
  bad5.indicator_label = 2;
  CHECK_THROWS_AS(bad5.validate(), ConfigError);
}

TEST_CASE("encoder head splits into z_o, mu, log_var") {
  auto arch = small_arch(5);
  auto model = build_dbvae(arch, 3);
  Rng rng(4);
  auto x = Tensor<float>::uniform({2, 64, 64, 3}, rng, 0.0f, 1.0f);
  auto out = model.encode(x);
  CHECK(out.z_o.shape() == Shape{2, 1});
  CHECK(out.mu.shape() == Shape{2, 5});
  CHECK(out.log_var.shape() == Shape{2, 5});

  auto img = model.decode(out.mu);
  CHECK(img.shape() == Shape{2, 64, 64, 3});
  CHECK(img.values().minCoeff() >= 0.0f);
  CHECK(img.values().maxCoeff() <= 1.0f);

  auto b = build_dbvae(arch, 3);
  bool same = true;
  for (std::size_t i = 0; i < model.params.size(); ++i)
    same = same && (model.params[i].values() == b.params[i].values()).all();
  CHECK(same);
}

TEST_CASE("reparameterization trick") {
  auto mu = Tensor<double>::from_vector({1, 3}, {1.0, -2.0, 0.5});
  auto lv = Tensor<double>::from_vector({1, 3}, {0.0, 2.0, -2.0});
  auto zero_eps = Tensor<double>::zeros({1, 3});
  auto z0 = reparameterize(mu, lv, zero_eps);
  CHECK((z0.values() - mu.values()).abs().maxCoeff() < 1e-15);

  auto eps = Tensor<double>::from_vector({1, 3}, {1.0, 1.0, 1.0});
  auto z = reparameterize(mu, lv, eps);
  CHECK(z.value(0) == doctest::Approx(1.0 + 1.0));
  CHECK(z.value(1) == doctest::Approx(-2.0 + std::exp(1.0)));
  CHECK(z.value(2) == doctest::Approx(0.5 + std::exp(-1.0)));

  CHECK_THROWS_AS(reparameterize(mu, lv, Tensor<double>::zeros({1, 2})),
                  DimensionError);
}

TEST_CASE("vae loss composition") {
  auto x = Tensor<double>::from_vector({1, 4}, {0.2, 0.4, 0.6, 0.8});
  auto xh = Tensor<double>::from_vector({1, 4}, {0.2, 0.5, 0.6, 0.7});
  auto mu = Tensor<double>::from_vector({1, 2}, {1.0, 0.0});
  auto lv = Tensor<double>::zeros({1, 2});
  // recon L1 = 0.1 + 0.1 = 0.2; KL = 0.5
  auto l = vae_loss(x, xh, mu, lv, 0.0005);
  CHECK(l.value() == doctest::Approx(0.2 + 0.0005 * 0.5).epsilon(1e-9));
  // c = 0 drops the KL term entirely
  CHECK(vae_loss(x, xh, mu, lv, 0.0).value() == doctest::Approx(0.2));
  CHECK_THROWS_AS(vae_loss(x, xh, mu, lv, -0.1), ConfigError);
}

TEST_CASE("total loss indicator masks the vae term per sample") {
  // two identical samples, indicator keeps only the first
  auto targets = Tensor<double>::from_vector({2, 1}, {1.0, 1.0});
  auto z_o = Tensor<double>::from_vector({2, 1}, {0.0, 0.0});
  auto x = Tensor<double>::full({2, 4}, 0.5);
  auto xh = Tensor<double>::full({2, 4}, 0.25);
  auto mu = Tensor<double>::full({2, 2}, 1.0);
  auto lv = Tensor<double>::zeros({2, 2});

  Array<double> both(2), first(2), none(2);
  both << 1, 1;
  first << 1, 0;
  none << 0, 0;

  const double l_y = std::log(2.0);  // bce of sigmoid(0) vs 1
  const double vae_per_sample = 4 * 0.25 + 0.0005 * (2 * 0.5);
  CHECK(dbvae_total_loss(targets, z_o, x, xh, mu, lv, 0.0005, both).value() ==
        doctest::Approx(l_y + vae_per_sample).epsilon(1e-9));
  CHECK(dbvae_total_loss(targets, z_o, x, xh, mu, lv, 0.0005, first).value() ==
        doctest::Approx(l_y + 0.5 * vae_per_sample).epsilon(1e-9));
  CHECK(dbvae_total_loss(targets, z_o, x, xh, mu, lv, 0.0005, none).value() ==
        doctest::Approx(l_y).epsilon(1e-9));

  Array<double> bad(2);
  bad << 0.5, 1;
  CHECK_THROWS_AS(dbvae_total_loss(targets, z_o, x, xh, mu, lv, 0.0005, bad),
                  DomainError);
}

TEST_CASE("latent histograms upweight rare samples") {
  VaeConfig cfg;
  cfg.latent_dim = 1;
  cfg.histogram_bins = 10;
  cfg.smoothing_alpha = 0.001;

  // nine samples clustered at 0.05, one outlier at 0.95
  std::vector<Array<float>> mu_rows;
  for (int i = 0; i < 9; ++i) {
    Array<float> r(1);
    r[0] = 0.05f + 0.001f * i;
    mu_rows.push_back(r);
  }
  Array<float> outlier(1);
  outlier[0] = 0.95f;
  mu_rows.push_back(outlier);

  auto stats = update_latent_histograms(mu_rows, cfg);
  REQUIRE(stats.dims.size() == 1);
  REQUIRE(stats.probabilities.size() == 10);

  double sum = 0;
  for (double p : stats.probabilities) {
    CHECK(p > 0.0);
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  // rare sample weight: freq 1/10 vs 9/10 -> ~9x ratio under tiny alpha
  const double ratio = stats.probabilities[9] / stats.probabilities[0];
  CHECK(ratio > 8.0);
  CHECK(ratio < 10.0);

  long total = 0;
  for (long c : stats.dims[0].counts) total += c;
  CHECK(total == 10);

  SUBCASE("uniform weights for identical samples") {
    std::vector<Array<float>> same(6, mu_rows[0]);
    auto s = update_latent_histograms(same, cfg);
    for (double p : s.probabilities) CHECK(p == doctest::Approx(1.0 / 6).epsilon(1e-9));
  }
  SUBCASE("two latent dims compound the weighting") {
    VaeConfig cfg2 = cfg;
    cfg2.latent_dim = 2;
    std::vector<Array<float>> rows;
    for (int i = 0; i < 9; ++i) {
      Array<float> r(2);
      r << 0.05f, 0.05f;
      rows.push_back(r);
    }
    Array<float> out2(2);
    out2 << 0.95f, 0.95f;
    rows.push_back(out2);
    auto s = update_latent_histograms(rows, cfg2);
    // rarity multiplies across dimensions: ~81x
    CHECK(s.probabilities[9] / s.probabilities[0] > 60.0);
  }
}

TEST_CASE("alpha smoothing bounds the weight ratio") {
  VaeConfig cfg;
  cfg.latent_dim = 1;
  cfg.smoothing_alpha = 10.0;  // heavy smoothing flattens everything
  std::vector<Array<float>> rows;
  for (int i = 0; i < 9; ++i) {
    Array<float> r(1);
    r[0] = 0.0f;
    rows.push_back(r);
  }
  Array<float> outlier(1);
  outlier[0] = 1.0f;
  rows.push_back(outlier);
  auto s = update_latent_histograms(rows, cfg);
  CHECK(s.probabilities[9] / s.probabilities[0] < 1.1);
}

TEST_CASE("dbvae training runs, learns, and is deterministic") {
  auto dir = temp_dir("dbvae-train");
  auto m = tiny_dataset(dir, 10, 5);
  auto [train_m, val_m] = split(m, 0.8, 0.2, 2);

  VaeConfig vc;
  vc.latent_dim = 4;
  vc.histogram_bins = 5;
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch_size = 8;
  tc.seed = 7;
  tc.optimizer.learning_rate = 1e-3f;

  auto res = train_dbvae(train_m, val_m, vc, tc);
  REQUIRE_FALSE(res.checkpoint.history.empty());
  CHECK(res.per_epoch_stats.size() == res.checkpoint.history.size());
  const auto& last = res.checkpoint.history.back();
  // the heavy reconstruction term makes per-epoch accuracy noisy at this
  // scale; the best epoch still has to beat chance
  double best_acc = 0;
  for (const auto& e : res.checkpoint.history)
    best_acc = std::max(best_acc, e.train_accuracy);
  CHECK(best_acc > 0.6);
  CHECK(last.train_accuracy >= 0.0);
  CHECK(last.train_accuracy <= 1.0);
  CHECK(last.recon_loss > 0.0);
  CHECK(last.kl_loss >= 0.0);
  CHECK(last.total_loss ==
        doctest::Approx(last.class_loss + last.recon_loss +
                        vc.kl_coefficient * last.kl_loss)
            .epsilon(1e-6));

  // per-epoch probabilities are a distribution over the training set
  for (const auto& st : res.per_epoch_stats) {
    double sum = 0;
    for (double p : st.probabilities) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(st.probabilities.size() == train_m.samples.size());
    CHECK(st.dims.size() == static_cast<std::size_t>(vc.latent_dim));
  }

  auto res2 = train_dbvae(train_m, val_m, vc, tc);
  CHECK(res2.checkpoint.id() == res.checkpoint.id());

  // checkpoint round trip
  const std::string path = (dir / "dbvae.ckpt").string();
  save_checkpoint(res.checkpoint, path);
  auto loaded = load_dbvae_checkpoint(path);
  CHECK(loaded.id() == res.checkpoint.id());
  CHECK(loaded.vae.latent_dim == 4);
  auto p1 = predict_dbvae(res.checkpoint, val_m);
  auto p2 = predict_dbvae(loaded, val_m);
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].score == p2[i].score);

  // latent stats file lands on disk and is non-trivial
  save_latent_stats(res.per_epoch_stats, (dir / "latent.json").string());
  CHECK(fs::exists(dir / "latent.json"));
  CHECK(fs::file_size(dir / "latent.json") > 100);
}

TEST_CASE("disabling the vae term reduces training to the classifier objective") {
  auto dir = temp_dir("dbvae-degenerate");
  auto m = tiny_dataset(dir, 8, 6);
  auto [train_m, val_m] = split(m, 0.75, 0.25, 3);

  VaeConfig vc;
  vc.latent_dim = 4;
  vc.vae_term_enabled = false;
  vc.resampling_enabled = false;
  TrainConfig tc;
  tc.max_epochs = 8;
  tc.batch_size = 6;
  tc.seed = 11;
  tc.optimizer.learning_rate = 3e-3f;

  auto res = train_dbvae(train_m, val_m, vc, tc);
  // without the reconstruction term this is a plain classifier and learns
  double best_acc = 0;
  for (const auto& e : res.checkpoint.history)
    best_acc = std::max(best_acc, e.train_accuracy);
  CHECK(best_acc > 0.8);
  for (const auto& ep : res.checkpoint.history) {
    CHECK(ep.recon_loss == 0.0);
    CHECK(ep.kl_loss == 0.0);
    CHECK(ep.total_loss == doctest::Approx(ep.class_loss).epsilon(1e-12));
  }

  // with resampling disabled every epoch's weights are uniform
  for (const auto& st : res.per_epoch_stats)
    for (double p : st.probabilities)
      CHECK(p == doctest::Approx(1.0 / train_m.samples.size()).epsilon(1e-9));

  // and the run is still deterministic
  auto res2 = train_dbvae(train_m, val_m, vc, tc);
  CHECK(res2.checkpoint.id() == res.checkpoint.id());
}

TEST_CASE("resampling shifts batch composition toward rare samples") {
  // 18 bright class-1 images, 2 dark class-1-style minority in class 0:
  // verify the adaptive draw picks the sparse latent region more often than
  // uniform sampling would
  auto dir = temp_dir("dbvae-shift");
  fs::create_directories(dir / "images");
  Rng rng(12);
  DatasetManifest m;
  auto add = [&](const std::string& id, float base, int label) {
    Image img = Image::filled(kInputSize, kInputSize, 0);
    for (auto& px : img.pixels)
      px = std::clamp(base + 0.05f * static_cast<float>(rng.normal()), 0.0f, 1.0f);
    std::string path = (dir / "images" / (id + ".png")).string();
    save_png(img, path);
    m.samples.push_back({id, path, label, std::nullopt, SampleOrigin::kOriginal,
                         std::nullopt});
  };
  for (int i = 0; i < 18; ++i) add("a" + std::to_string(i), 0.75f, 1);
  for (int i = 0; i < 18; ++i) add("b" + std::to_string(i), 0.30f, 0);
  add("rare0", 0.05f, 0);
  add("rare1", 0.05f, 0);

  VaeConfig vc;
  vc.latent_dim = 3;
  vc.histogram_bins = 5;
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.batch_size = 8;
  tc.seed = 4;
  tc.optimizer.learning_rate = 1e-3f;
  auto res = train_dbvae(m, m, vc, tc);

  const auto& probs = res.per_epoch_stats.back().probabilities;
  REQUIRE(probs.size() == m.samples.size());
  // rare samples sit in low-density latent bins, so their draw probability
  // exceeds the uniform 1/38
  const double uniform = 1.0 / static_cast<double>(m.samples.size());
  CHECK(probs[probs.size() - 1] > uniform);
  CHECK(probs[probs.size() - 2] > uniform);
}
