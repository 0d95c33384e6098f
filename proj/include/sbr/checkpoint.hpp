#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sbr/tensor.hpp"

namespace sbr {

// On-disk container shared by all model kinds:
//   magic "SBRCKPT1"
//   u64 little-endian header length
//   JSON header: {format_version, model_kind, meta, tensors:[{name,shape,offset,length}]}
//   raw little-endian float32 tensor payloads, in header order
//   trailing u64 FNV-1a checksum of every prior byte
struct Checkpoint {
  std::string model_kind;
  nlohmann::ordered_json meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& tensor(const std::string& name) const;
};

// Identity string (checksum of the serialized bytes) without touching disk.
std::string checkpoint_digest(const Checkpoint& c);

void save_checkpoint(const Checkpoint& c, const std::string& path);

// Verifies magic, version, checksum, and shape/payload agreement before
// constructing any tensors. Throws IoError on any mismatch.
Checkpoint load_checkpoint(const std::string& path);

// Streaming FNV-1a 64-bit, also used for run-artifact identities.
struct Fnv1a64 {
  std::uint64_t state = 1469598103934665603ULL;
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= 1099511628211ULL;
    }
  }
  std::uint64_t digest() const { return state; }
};

std::string to_hex(std::uint64_t v);

}  // namespace sbr
