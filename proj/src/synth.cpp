#include "sbr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "sbr/errors.hpp"
#include "sbr/rng.hpp"

namespace fs = std::filesystem;

namespace sbr {

void SynthConfig::validate() const {
  if (n_per_class <= 0) throw ConfigError("n_per_class must be positive");
  if (!(minority_fraction > 0.0 && minority_fraction < 1.0))
    throw ConfigError("minority_fraction must lie in (0,1)");
  if (image_size < 16) throw ConfigError("image_size must be at least 16");
}

namespace {

struct SampleSpec {
  int label;        // 0 = disc, 1 = square
  bool minority;
  std::uint64_t rng_seed;
};

Image render(const SampleSpec& spec, const SynthConfig& cfg) {
  Rng rng(spec.rng_seed);
  const int n = cfg.image_size;

  // Subgroup nuisance factor: background brightness band and contrast.
  const double bg = spec.minority ? rng.uniform(0.05, 0.35) : rng.uniform(0.60, 0.95);
  const double delta = spec.minority ? rng.uniform(0.10, 0.22) : rng.uniform(0.35, 0.60);
  const double shade = rng.uniform() < 0.5 ? bg + delta : bg - delta;
  const double tint[3] = {rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03),
                          rng.uniform(-0.03, 0.03)};

  Image img = Image::filled(n, n, 0.0f);
  const double cx = n / 2.0 + rng.uniform(-n / 8.0, n / 8.0);
  const double cy = n / 2.0 + rng.uniform(-n / 8.0, n / 8.0);
  const double radius = rng.uniform(n * 0.18, n * 0.30);

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double dx = x - cx, dy = y - cy;
      bool inside;
      if (spec.label == 0) {
        inside = dx * dx + dy * dy <= radius * radius;
      } else {
        inside = std::abs(dx) <= radius * 0.9 && std::abs(dy) <= radius * 0.9;
      }
      const double base = inside ? shade : bg;
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(base + tint[c]);
    }
  }

  // Occlusion rectangle near the shape; heavier for the minority subgroup.
  const double occ_p = spec.minority ? cfg.occlusion_probability_minority
                                     : cfg.occlusion_probability_majority;
  if (rng.uniform() < occ_p) {
    const int ow = static_cast<int>(rng.uniform(n * 0.15, n * 0.40));
    const int oh = static_cast<int>(rng.uniform(n * 0.15, n * 0.40));
    const int ox = std::clamp(static_cast<int>(cx + rng.uniform(-radius, radius)) - ow / 2, 0, n - ow);
    const int oy = std::clamp(static_cast<int>(cy + rng.uniform(-radius, radius)) - oh / 2, 0, n - oh);
    const double occ_shade = rng.uniform(0.0, 1.0);
    for (int y = oy; y < oy + oh; ++y)
      for (int x = ox; x < ox + ow; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(occ_shade);
  }

  // Pixel noise.
  for (float& v : img.pixels)
    v = std::clamp(v + static_cast<float>(rng.normal() * cfg.noise_level), 0.0f, 1.0f);
  return img;
}

}  // namespace

DatasetManifest generate_synthetic(const SynthConfig& cfg,
                                   const std::string& out_dir) {
  cfg.validate();
  const fs::path root(out_dir);
  fs::create_directories(root / "images");

  const int n_min = static_cast<int>(
      std::lround(cfg.minority_fraction * cfg.n_per_class));

  DatasetManifest m;
  m.class_names = {{0, "disc"}, {1, "square"}};
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < cfg.n_per_class; ++i) {
      SampleSpec spec;
      spec.label = label;
      spec.minority = i < n_min;
      const std::string id =
          "synth-" + std::to_string(label) + "-" + std::to_string(i);
      spec.rng_seed = derive_seed(cfg.seed, "synth/" + id);

      Image img = render(spec, cfg);
      const fs::path file = root / "images" / (id + ".png");
      save_png(img, file.string());

      SampleRecord rec;
      rec.id = id;
      rec.path = file.string();
      rec.label = label;
      rec.group = spec.minority ? "minority" : "majority";
      rec.origin = SampleOrigin::kSynthetic;
      m.samples.push_back(std::move(rec));
    }
  }
  save_manifest(m, (root / "manifest.json").string());
  return load_manifest((root / "manifest.json").string());
}

}  // namespace sbr
