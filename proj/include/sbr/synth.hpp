#pragma once

#include <cstdint>
#include <string>

#include "sbr/manifest.hpp"

namespace sbr {

// Desk-scale biased dataset: two classes separated by shape (disc vs square),
// each split into a majority subgroup (bright background, high contrast) and
// a minority subgroup (dark background, low contrast, heavier occlusion).
// The minority subgroup is deliberately harder and rarer, so an
// under-trained classifier degrades on it first.
struct SynthConfig {
  int n_per_class = 1000;
  double minority_fraction = 0.1;  // in (0,1); exact counts by construction
  int image_size = 64;
  std::uint64_t seed = 0;
  double occlusion_probability_majority = 0.15;
  double occlusion_probability_minority = 0.6;
  double noise_level = 0.04;

  void validate() const;
};

// Writes PNG files under <out_dir>/images/ and a manifest.json; deterministic
// per seed (byte-identical reruns). Group tags: "majority" / "minority".
DatasetManifest generate_synthetic(const SynthConfig& cfg,
                                   const std::string& out_dir);

}  // namespace sbr
