#include "sbr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sbr/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace sbr {

namespace {

constexpr char kMagic[8] = {'S', 'B', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

// Serializes everything up to (not including) the trailing checksum.
std::string serialize_body(const Checkpoint& c) {
  nlohmann::ordered_json header;
  header["format_version"] = kFormatVersion;
  header["model_kind"] = c.model_kind;
  header["meta"] = c.meta;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["length"] = static_cast<std::uint64_t>(t.size()) * sizeof(float);
    tensors.push_back(std::move(entry));
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
  }
  header["tensors"] = std::move(tensors);
  const std::string header_bytes = header.dump();

  std::string out;
  out.reserve(8 + 8 + header_bytes.size() + offset);
  out.append(kMagic, 8);
  const std::uint64_t hlen = header_bytes.size();
  out.append(reinterpret_cast<const char*>(&hlen), 8);
  out.append(header_bytes);
  for (const auto& [name, t] : c.tensors)
    out.append(reinterpret_cast<const char*>(t.values().data()),
               static_cast<std::size_t>(t.size()) * sizeof(float));
  return out;
}

}  // namespace

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError("checkpoint has no tensor named " + name);
}

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

std::string checkpoint_digest(const Checkpoint& c) {
  const std::string body = serialize_body(c);
  Fnv1a64 h;
  h.update(body.data(), body.size());
  return to_hex(h.digest());
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const std::string body = serialize_body(c);
  Fnv1a64 h;
  h.update(body.data(), body.size());
  const std::uint64_t sum = h.digest();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.write(reinterpret_cast<const char*>(&sum), 8);
  if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  if (bytes.size() < 8 + 8 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  std::uint64_t hlen;
  std::memcpy(&hlen, bytes.data() + 8, 8);
  if (16 + hlen + 8 > bytes.size())
    throw IoError("truncated checkpoint header: " + path);

  Fnv1a64 h;
  h.update(bytes.data(), bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (h.digest() != stored)
    throw IoError("checkpoint checksum mismatch (corrupt file): " + path);

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint header parse error: " + std::string(e.what()));
  }
  if (header.at("format_version").get<int>() != kFormatVersion)
    throw IoError("unsupported checkpoint format version in " + path);

  const std::size_t payload_base = 16 + hlen;
  const std::size_t payload_size = bytes.size() - 8 - payload_base;

  Checkpoint c;
  c.model_kind = header.at("model_kind").get<std::string>();
  c.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    Shape shape;
    for (const auto& d : entry.at("shape")) shape.push_back(d.get<Eigen::Index>());
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t length = entry.at("length").get<std::uint64_t>();
    if (length != static_cast<std::uint64_t>(shape_size(shape)) * sizeof(float))
      throw IoError("checkpoint tensor " + name + " length disagrees with shape");
    if (offset + length > payload_size)
      throw IoError("checkpoint tensor " + name + " extends past the payload");
    Array<float> data(shape_size(shape));
    std::memcpy(data.data(), bytes.data() + payload_base + offset,
                static_cast<std::size_t>(length));
    c.tensors.emplace_back(name, Tensor<float>(shape, std::move(data)));
  }
  return c;
}

}  // namespace sbr
