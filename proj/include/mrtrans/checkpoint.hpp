#pragma once

// Single-file checkpoint archive:
//   "MRTCKPT1\n" | u64 manifest length | manifest JSON | blob bytes
// The manifest lists every blob (name, shape, byte offset) in name order
// together with the config, its fingerprint, the iteration and the RNG state.
// Blobs are little-endian float32.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mrtrans/tensor.hpp"

namespace mrtrans {

struct Checkpoint {
  nlohmann::json config;
  std::string fingerprint;
  std::int64_t iteration = 0;
  std::string rng_state;
  nlohmann::json extra = nlohmann::json::object();
  std::map<std::string, Tensor<float>> blobs;
};

namespace checkpoint_detail {
inline constexpr char kMagic[] = "MRTCKPT1\n";
inline constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

inline bool little_endian() {
  const std::uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}
}  // namespace checkpoint_detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  if (!checkpoint_detail::little_endian()) throw std::runtime_error("checkpoint: big-endian hosts are not supported");
  nlohmann::json manifest;
  manifest["config"] = ck.config;
  manifest["fingerprint"] = ck.fingerprint;
  manifest["iteration"] = ck.iteration;
  manifest["rng_state"] = ck.rng_state;
  manifest["extra"] = ck.extra;
  manifest["blobs"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ck.blobs) {
    const auto& s = t.shape();
    manifest["blobs"].push_back({{"name", name}, {"shape", {s[0], s[1], s[2], s[3]}}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  const std::string text = manifest.dump();
  std::string out(checkpoint_detail::kMagic, checkpoint_detail::kMagicLen);
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += text;
  for (const auto& [name, t] : ck.blobs) out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  using checkpoint_detail::kMagicLen;
  if (bytes.size() < kMagicLen + 8 || bytes.compare(0, kMagicLen, checkpoint_detail::kMagic) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  std::uint64_t len;
  std::memcpy(&len, bytes.data() + kMagicLen, sizeof(len));
  const std::size_t start = kMagicLen + sizeof(len);
  if (len > bytes.size() - start) throw std::runtime_error("checkpoint: truncated manifest");
  const auto manifest = nlohmann::json::parse(bytes.substr(start, len));
  Checkpoint ck;
  ck.config = manifest.at("config");
  ck.fingerprint = manifest.at("fingerprint").get<std::string>();
  ck.iteration = manifest.at("iteration").get<std::int64_t>();
  ck.rng_state = manifest.at("rng_state").get<std::string>();
  ck.extra = manifest.value("extra", nlohmann::json::object());
  const std::size_t data = start + len;
  for (const auto& b : manifest.at("blobs")) {
    const auto dims = b.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw std::runtime_error("checkpoint: blob shape must have 4 dimensions");
    Tensor<float> t({dims[0], dims[1], dims[2], dims[3]});
    const auto off = b.at("offset").get<std::uint64_t>();
    const std::size_t nbytes = t.size() * sizeof(float);
    if (off > bytes.size() - data || nbytes > bytes.size() - data - off)
      throw std::runtime_error("checkpoint: truncated blob " + b.at("name").get<std::string>());
    std::memcpy(t.data(), bytes.data() + data + off, nbytes);
    ck.blobs.emplace(b.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write error in " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move checkpoint into " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace mrtrans
