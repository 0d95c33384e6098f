#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sbr/image.hpp"
#include "sbr/tensor.hpp"

namespace sbr {

enum class SampleOrigin {
  kOriginal,
  kAugmentedFlip,
  kAugmentedCropLeft,
  kAugmentedCropRight,
  kSynthetic,
};

std::string origin_name(SampleOrigin o);
SampleOrigin origin_from_name(const std::string& s);

struct SampleRecord {
  std::string id;
  std::string path;
  int label = 0;  // 0 or 1
  std::optional<std::string> group;
  SampleOrigin origin = SampleOrigin::kOriginal;
  std::optional<std::string> parent_id;  // set for augmented records
};

struct DatasetManifest {
  int version = 1;
  std::map<int, std::string> class_names;
  std::vector<SampleRecord> samples;

  // Duplicate ids, bad labels, augmented records without parents.
  void validate() const;
  const SampleRecord* find(const std::string& id) const;
};

// JSON load with schema validation; relative sample paths resolve against
// the manifest's directory. Verifies every referenced file exists.
DatasetManifest load_manifest(const std::string& path);

// Canonical write: fixed key order, 2-space indent, trailing newline.
// save then load round-trips byte-identically.
void save_manifest(const DatasetManifest& m, const std::string& path);

constexpr int kInputSize = 64;

// Decode, bilinear-resize to 64x64 RGB, scale to [0,1]. Result shape {64,64,3}.
Tensor<float> decode_and_preprocess(const SampleRecord& record);

Tensor<float> image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor<float>& t);

// Fixed augmentation set: mirror, left 85%-width crop, right 85%-width crop
// (crops are resized back to 64x64). Exactly three outputs per input.
std::array<Tensor<float>, 3> augment_sample(const Tensor<float>& image);

// Stratified-by-label split; fractions must sum to 1 within 1e-9.
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& m,
                                                  double train_fraction,
                                                  double val_fraction,
                                                  std::uint64_t seed);

}  // namespace sbr
