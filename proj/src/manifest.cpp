#include "sbr/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "sbr/errors.hpp"
#include "sbr/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace sbr {

std::string origin_name(SampleOrigin o) {
  switch (o) {
    case SampleOrigin::kOriginal: return "original";
    case SampleOrigin::kAugmentedFlip: return "augmented_flip";
    case SampleOrigin::kAugmentedCropLeft: return "augmented_crop_left";
    case SampleOrigin::kAugmentedCropRight: return "augmented_crop_right";
    case SampleOrigin::kSynthetic: return "synthetic";
  }
  throw UsageError("unknown sample origin");
}

SampleOrigin origin_from_name(const std::string& s) {
  if (s == "original") return SampleOrigin::kOriginal;
  if (s == "augmented_flip") return SampleOrigin::kAugmentedFlip;
  if (s == "augmented_crop_left") return SampleOrigin::kAugmentedCropLeft;
  if (s == "augmented_crop_right") return SampleOrigin::kAugmentedCropRight;
  if (s == "synthetic") return SampleOrigin::kSynthetic;
  throw IoError("unknown sample origin: " + s);
}

void DatasetManifest::validate() const {
  if (samples.empty()) throw IoError("manifest has no samples");
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second)
      throw IoError("duplicate sample id in manifest: " + s.id);
    if (s.label != 0 && s.label != 1)
      throw IoError("sample " + s.id + " has label outside {0,1}");
  }
  for (const auto& s : samples) {
    const bool augmented = s.origin == SampleOrigin::kAugmentedFlip ||
                           s.origin == SampleOrigin::kAugmentedCropLeft ||
                           s.origin == SampleOrigin::kAugmentedCropRight;
    if (augmented) {
      if (!s.parent_id)
        throw IoError("augmented sample " + s.id + " lacks parent_id");
      if (!ids.count(*s.parent_id))
        throw IoError("augmented sample " + s.id + " references missing parent " +
                      *s.parent_id);
    }
  }
}

const SampleRecord* DatasetManifest::find(const std::string& id) const {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

namespace {

ordered_json manifest_to_json(const DatasetManifest& m) {
  ordered_json j;
  j["version"] = m.version;
  ordered_json names = ordered_json::object();
  for (const auto& [k, v] : m.class_names) names[std::to_string(k)] = v;
  j["class_names"] = names;
  ordered_json samples = ordered_json::array();
  for (const auto& s : m.samples) {
    ordered_json r;
    r["id"] = s.id;
    r["path"] = s.path;
    r["label"] = s.label;
    if (s.group) r["group"] = *s.group;
    r["origin"] = origin_name(s.origin);
    if (s.parent_id) r["parent_id"] = *s.parent_id;
    samples.push_back(std::move(r));
  }
  j["samples"] = std::move(samples);
  return j;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest file not found: " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest parse error in " + path + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    for (const auto& [k, v] : j.at("class_names").items())
      m.class_names[std::stoi(k)] = v.get<std::string>();
    for (const auto& r : j.at("samples")) {
      SampleRecord s;
      s.id = r.at("id").get<std::string>();
      s.path = r.at("path").get<std::string>();
      s.label = r.at("label").get<int>();
      if (r.contains("group")) s.group = r.at("group").get<std::string>();
      s.origin = origin_from_name(r.at("origin").get<std::string>());
      if (r.contains("parent_id")) s.parent_id = r.at("parent_id").get<std::string>();
      m.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest schema violation in " + path + ": " + e.what());
  }
  m.validate();
  const fs::path base = fs::path(path).parent_path();
  for (auto& s : m.samples) {
    fs::path p(s.path);
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p))
      throw IoError("sample " + s.id + " references missing file: " + p.string());
    s.path = p.string();
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  m.validate();
  // store sample paths relative to the manifest directory when possible
  DatasetManifest copy = m;
  const fs::path base = fs::absolute(fs::path(path)).parent_path();
  for (auto& s : copy.samples) {
    std::error_code ec;
    fs::path rel = fs::relative(s.path, base, ec);
    if (!ec && !rel.empty()) s.path = rel.generic_string();
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << manifest_to_json(copy).dump(2) << "\n";
}

Tensor<float> image_to_tensor(const Image& img) {
  Array<float> a(static_cast<Eigen::Index>(img.pixels.size()));
  std::copy(img.pixels.begin(), img.pixels.end(), a.data());
  return Tensor<float>({img.height, img.width, 3}, std::move(a));
}

Image tensor_to_image(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(2) != 3)
    throw DimensionError("tensor_to_image expects shape [H,W,3]");
  Image img;
  img.height = static_cast<int>(t.dim(0));
  img.width = static_cast<int>(t.dim(1));
  img.pixels.assign(t.values().data(), t.values().data() + t.size());
  return img;
}

Tensor<float> decode_and_preprocess(const SampleRecord& record) {
  Image img = load_image(record.path);
  return image_to_tensor(bilinear_resize(img, kInputSize, kInputSize));
}

std::array<Tensor<float>, 3> augment_sample(const Tensor<float>& image) {
  Image img = tensor_to_image(image);
  const int crop_w = static_cast<int>(img.width * 0.85);  // 54 of 64
  Image flipped = horizontal_flip(img);
  Image left = bilinear_resize(crop_columns(img, 0, crop_w), img.height, img.width);
  Image right = bilinear_resize(crop_columns(img, img.width - crop_w, crop_w),
                                img.height, img.width);
  return {image_to_tensor(flipped), image_to_tensor(left), image_to_tensor(right)};
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& m,
                                                  double train_fraction,
                                                  double val_fraction,
                                                  std::uint64_t seed) {
  if (std::abs(train_fraction + val_fraction - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  m.validate();
  DatasetManifest train, val;
  train.version = val.version = m.version;
  train.class_names = val.class_names = m.class_names;

  Rng rng(derive_seed(seed, "split"));
  std::vector<std::size_t> assigned_val;
  for (int label : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.samples.size(); ++i)
      if (m.samples[i].label == label) idx.push_back(i);
    rng.shuffle(idx);
    const std::size_t n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(idx.size())));
    assigned_val.insert(assigned_val.end(), idx.begin(), idx.begin() + n_val);
  }
  std::set<std::size_t> val_set(assigned_val.begin(), assigned_val.end());
  for (std::size_t i = 0; i < m.samples.size(); ++i)
    (val_set.count(i) ? val : train).samples.push_back(m.samples[i]);
  return {std::move(train), std::move(val)};
}

}  // namespace sbr
