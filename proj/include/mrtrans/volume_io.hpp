#pragma once

// Volume files: NIfTI-1 (.nii, .nii.gz) and a raw float32 format with a text
// sidecar "<file>.hdr" holding "depth rows cols" and optionally
// "spacing <axial> <row> <col>".

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrtrans/data.hpp"

namespace mrtrans::io {

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Reads a whole file, inflating gzip content transparently.
inline std::vector<unsigned char> read_bytes(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw std::runtime_error("read error in " + path);
  return out;
}

template <typename V>
V load_as(const unsigned char* p, bool swap) {
  unsigned char b[sizeof(V)];
  std::memcpy(b, p, sizeof(V));
  if (swap) std::reverse(b, b + sizeof(V));
  V v;
  std::memcpy(&v, b, sizeof(V));
  return v;
}

inline bool host_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

}  // namespace detail

/// NIfTI-1 reader; x is the fastest axis and maps to columns, z to depth.
/// Applies scl_slope / scl_inter when the slope is nonzero.
inline Volume3D read_nifti(const std::string& path) {
  const auto bytes = detail::read_bytes(path);
  if (bytes.size() < 352) throw std::runtime_error(path + ": too short for a NIfTI-1 header");
  bool swap = false;
  auto i32 = [&](std::size_t off) { return detail::load_as<std::int32_t>(bytes.data() + off, swap); };
  if (i32(0) != 348) {
    swap = true;
    if (i32(0) != 348) throw std::runtime_error(path + ": not a NIfTI-1 file (sizeof_hdr != 348)");
  }
  if (std::memcmp(bytes.data() + 344, "n+1", 3) != 0)
    throw std::runtime_error(path + ": only single-file NIfTI-1 (magic n+1) is supported");
  auto i16 = [&](std::size_t off) { return detail::load_as<std::int16_t>(bytes.data() + off, swap); };
  auto f32 = [&](std::size_t off) { return detail::load_as<float>(bytes.data() + off, swap); };
  const int ndim = i16(40);
  if (ndim < 1 || ndim > 7) throw std::runtime_error(path + ": bad dim[0]");
  int dims[3] = {1, 1, 1};
  for (int k = 0; k < std::min(ndim, 3); ++k) dims[k] = i16(42 + 2 * k);
  for (int k = 3; k < ndim; ++k)
    if (i16(42 + 2 * k) > 1) throw std::runtime_error(path + ": volumes with more than 3 dimensions are not supported");
  const int datatype = i16(70);
  const float vox_offset = f32(108);
  const float slope = f32(112), inter = f32(116);
  const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  const auto offset = static_cast<std::size_t>(vox_offset);

  Volume3D vol(dims[2], dims[1], dims[0]);
  vol.spacing = {f32(88), f32(84), f32(80)};
  auto decode = [&]<typename V>(V) {
    if (offset + count * sizeof(V) > bytes.size()) throw std::runtime_error(path + ": truncated voxel data");
    for (std::size_t i = 0; i < count; ++i)
      vol.voxels[i] = static_cast<float>(detail::load_as<V>(bytes.data() + offset + i * sizeof(V), swap));
  };
  switch (datatype) {
    case 2: decode(std::uint8_t{}); break;
    case 4: decode(std::int16_t{}); break;
    case 8: decode(std::int32_t{}); break;
    case 16: decode(float{}); break;
    case 64: decode(double{}); break;
    case 256: decode(std::int8_t{}); break;
    case 512: decode(std::uint16_t{}); break;
    case 768: decode(std::uint32_t{}); break;
    default: throw std::runtime_error(path + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  if (slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f))
    for (auto& v : vol.voxels) v = v * slope + inter;
  return vol;
}

/// Writes a float32 NIfTI-1 file; gzip-compressed when the name ends in .gz.
inline void write_nifti(const Volume3D& vol, const std::string& path) {
  if (!detail::host_little_endian()) throw std::runtime_error("write_nifti: big-endian hosts are not supported");
  std::vector<unsigned char> hdr(352, 0);
  auto put = [&](std::size_t off, auto v) { std::memcpy(hdr.data() + off, &v, sizeof(v)); };
  put(0, std::int32_t{348});
  put(40, std::int16_t{3});
  put(42, static_cast<std::int16_t>(vol.cols));
  put(44, static_cast<std::int16_t>(vol.rows));
  put(46, static_cast<std::int16_t>(vol.depth));
  for (int k = 3; k < 7; ++k) put(42 + 2 * k, std::int16_t{1});
  put(70, std::int16_t{16});
  put(72, std::int16_t{32});
  put(76, 1.0f);
  put(80, static_cast<float>(vol.spacing[2]));
  put(84, static_cast<float>(vol.spacing[1]));
  put(88, static_cast<float>(vol.spacing[0]));
  put(108, 352.0f);
  std::memcpy(hdr.data() + 344, "n+1\0", 4);
  const bool gz = detail::ends_with(path, ".gz");
  gzFile f = gzopen(path.c_str(), gz ? "wb" : "wbT");
  if (!f) throw std::runtime_error("cannot write " + path);
  bool ok = gzwrite(f, hdr.data(), static_cast<unsigned>(hdr.size())) == static_cast<int>(hdr.size());
  const auto payload = static_cast<unsigned>(vol.voxels.size() * sizeof(float));
  if (payload > 0) ok = ok && gzwrite(f, vol.voxels.data(), payload) == static_cast<int>(payload);
  ok = gzclose(f) == Z_OK && ok;
  if (!ok) throw std::runtime_error("write error in " + path);
}

inline Volume3D read_raw(const std::string& path) {
  std::ifstream hdr(path + ".hdr");
  if (!hdr) throw std::runtime_error("missing sidecar header " + path + ".hdr");
  Volume3D vol;
  int d = -1, h = -1, w = -1;
  if (!(hdr >> d >> h >> w) || d < 0 || h < 0 || w < 0)
    throw std::runtime_error(path + ".hdr: expected 'depth rows cols'");
  vol = Volume3D(d, h, w);
  std::string key;
  if (hdr >> key) {
    if (key != "spacing" || !(hdr >> vol.spacing[0] >> vol.spacing[1] >> vol.spacing[2]))
      throw std::runtime_error(path + ".hdr: expected optional 'spacing a r c'");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> bytes(vol.voxels.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw std::runtime_error(path + ": truncated data");
  const bool swap = !detail::host_little_endian();
  for (std::size_t i = 0; i < vol.voxels.size(); ++i)
    vol.voxels[i] = detail::load_as<float>(bytes.data() + i * sizeof(float), swap);
  return vol;
}

inline void write_raw(const Volume3D& vol, const std::string& path) {
  if (!detail::host_little_endian()) throw std::runtime_error("write_raw: big-endian hosts are not supported");
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(vol.voxels.data()),
            static_cast<std::streamsize>(vol.voxels.size() * sizeof(float)));
  std::ofstream hdr(path + ".hdr");
  hdr << vol.depth << " " << vol.rows << " " << vol.cols << "\nspacing " << vol.spacing[0] << " " << vol.spacing[1]
      << " " << vol.spacing[2] << "\n";
  if (!out || !hdr) throw std::runtime_error("write error in " + path);
}

inline bool is_volume_file(const std::string& name) {
  return detail::ends_with(name, ".nii") || detail::ends_with(name, ".nii.gz") || detail::ends_with(name, ".raw");
}

inline Volume3D read_volume(const std::string& path) {
  if (detail::ends_with(path, ".raw")) return read_raw(path);
  if (detail::ends_with(path, ".nii") || detail::ends_with(path, ".nii.gz")) return read_nifti(path);
  throw std::runtime_error("unrecognized volume extension: " + path);
}

/// One patient directory with a file per modality.
struct PatientFiles {
  std::string id;
  std::string source;
  std::string target;
};

/// Scans root/<patient>/ for files named "<anything>_<modality>.<ext>".
/// Patients lacking either modality are skipped.
inline std::vector<PatientFiles> scan_patients(const std::string& root, const std::string& source_modality,
                                               const std::string& target_modality) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root is not a directory: " + root);
  std::vector<PatientFiles> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    PatientFiles p{entry.path().filename().string(), {}, {}};
    for (const auto& f : fs::directory_iterator(entry.path())) {
      const std::string name = f.path().filename().string();
      if (!is_volume_file(name)) continue;
      std::string stem = name.substr(0, name.find('.'));
      if (detail::ends_with(stem, "_" + source_modality)) p.source = f.path().string();
      if (detail::ends_with(stem, "_" + target_modality)) p.target = f.path().string();
    }
    if (!p.source.empty() && !p.target.empty()) out.push_back(std::move(p));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

}  // namespace mrtrans::io
