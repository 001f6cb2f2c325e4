#pragma once

// Volumes, percentile normalization, axial slicing, affine augmentation,
// target-only misalignment and the synthetic paired-modality generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrtrans/interp.hpp"
#include "mrtrans/tensor.hpp"

namespace mrtrans {

/// D x H x W voxels, row-major with the axial index slowest.
struct Volume3D {
  int depth = 0, rows = 0, cols = 0;
  std::vector<float> voxels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm, (axial, row, col)

  Volume3D() = default;
  Volume3D(int d, int h, int w, float fill = 0.0f) : depth(d), rows(h), cols(w) {
    if (d < 0 || h < 0 || w < 0) throw std::invalid_argument("Volume3D: negative dimension");
    voxels.assign(static_cast<std::size_t>(d) * h * w, fill);
  }

  std::size_t size() const { return voxels.size(); }
  float& at(int d, int i, int j) { return voxels[(static_cast<std::size_t>(d) * rows + i) * cols + j]; }
  float at(int d, int i, int j) const { return voxels[(static_cast<std::size_t>(d) * rows + i) * cols + j]; }

  Image2D slice(int d) const {
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    auto first = voxels.begin() + static_cast<std::ptrdiff_t>(d * plane);
    return Image2D(rows, cols, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(plane)));
  }
};

/// Linear-interpolated percentile (q in [0,100]) of sorted values.
inline double percentile_sorted(const std::vector<float>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("percentile: empty input");
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (static_cast<double>(sorted[hi]) - sorted[lo]);
}

/// Clip to the [0.5, 99.5] percentile range and map it linearly onto [0,1].
/// A volume whose percentiles coincide maps to zeros.
inline Volume3D normalize_volume(const Volume3D& vol, double lower_pct = 0.5, double upper_pct = 99.5) {
  if (vol.voxels.empty()) throw std::invalid_argument("normalize_volume: empty volume");
  require_finite(std::span<const float>(vol.voxels), "normalize_volume");
  std::vector<float> sorted = vol.voxels;
  std::sort(sorted.begin(), sorted.end());
  const double lo = percentile_sorted(sorted, lower_pct);
  const double hi = percentile_sorted(sorted, upper_pct);
  Volume3D out = vol;
  if (!(hi > lo)) {
    std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
    return out;
  }
  for (auto& v : out.voxels) v = static_cast<float>((std::clamp<double>(v, lo, hi) - lo) / (hi - lo));
  return out;
}

inline bool slice_has_information(const Image2D& s, float threshold = 0.0f) {
  return std::any_of(s.vec().begin(), s.vec().end(), [threshold](float v) { return v > threshold; });
}

/// Axial slices whose maximum exceeds `threshold`, in order.
inline std::vector<Image2D> slice_volume(const Volume3D& vol, float threshold = 0.0f) {
  std::vector<Image2D> out;
  for (int d = 0; d < vol.depth; ++d) {
    Image2D s = vol.slice(d);
    if (slice_has_information(s, threshold)) out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Affine augmentation

struct AffineParams {
  double rotation = 0.0;                  // degrees
  std::array<double, 2> translation{};    // (ty, tx) pixels
  double scale = 1.0;

  static AffineParams identity() { return {}; }
  bool operator==(const AffineParams&) const = default;
};

/// Sampling ranges; the defaults are for 240 x 240 slices.
struct AugmentationRanges {
  double rotation = 10.0;
  double translation = 26.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
};

inline AffineParams sample_augmentation(std::mt19937_64& rng, const AugmentationRanges& r = {}) {
  std::uniform_real_distribution<double> rot(-r.rotation, r.rotation);
  std::uniform_real_distribution<double> tr(-r.translation, r.translation);
  std::uniform_real_distribution<double> sc(r.scale_min, r.scale_max);
  AffineParams p;
  p.rotation = rot(rng);
  p.translation[0] = tr(rng);
  p.translation[1] = tr(rng);
  p.scale = sc(rng);
  return p;
}

/// Shrinks a draw towards the identity by `magnitude` in [0,1].
inline AffineParams scale_params(const AffineParams& p, double magnitude) {
  return {p.rotation * magnitude, {p.translation[0] * magnitude, p.translation[1] * magnitude},
          1.0 + (p.scale - 1.0) * magnitude};
}

/// Rotates about the image center, scales about the center, then translates.
/// Positive rotation turns the content clockwise as displayed. Bilinear
/// interpolation with border replication.
inline Image2D apply_affine(const Image2D& img, const AffineParams& p) {
  require_finite(img.pixels(), "apply_affine");
  if (!(p.scale > 0.0)) throw std::invalid_argument("apply_affine: scale must be positive");
  const int h = img.rows(), w = img.cols();
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double theta = p.rotation * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  Image2D out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      // Invert q = center + scale * Rot * (src - center) + t.
      const double qy = (i - p.translation[0] - cy) / p.scale;
      const double qx = (j - p.translation[1] - cx) / p.scale;
      const double sy = cy + c * qy - s * qx;
      const double sx = cx + s * qy + c * qx;
      out(i, j) = static_cast<float>(std::clamp(kernels::bilinear_sample<double>(img.data(), h, w, sy, sx), 0.0, 1.0));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Paired slices

struct SlicePair {
  Image2D source;
  Image2D target;
  std::optional<AffineParams> misalignment;
};

inline SlicePair inject_misalignment(const SlicePair& pair, const AffineParams& p) {
  if (pair.misalignment) throw std::invalid_argument("inject_misalignment: pair is already misaligned");
  require_same_shape(pair.source, pair.target, "inject_misalignment");
  return SlicePair{pair.source, apply_affine(pair.target, p), p};
}

/// Moves only the target by a fresh draw, shrunk by `magnitude`.
inline SlicePair inject_misalignment(const SlicePair& pair, std::mt19937_64& rng, const AugmentationRanges& r = {},
                                     double magnitude = 1.0) {
  if (pair.misalignment) throw std::invalid_argument("inject_misalignment: pair is already misaligned");
  return inject_misalignment(pair, scale_params(sample_augmentation(rng, r), magnitude));
}

/// Independent generator for (stream, a, b) under a master seed.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

/// Pseudo-modality of a synthetic source: zero outside the foreground,
/// otherwise a monotone curve of the inverted source intensity.
inline float synthetic_contrast(float source) {
  if (source <= 0.0f) return 0.0f;
  const double u = std::clamp(1.0 - (source - 0.2) / 0.8, 0.0, 1.0);
  return static_cast<float>(0.1 + 0.85 * std::pow(u, 1.5));
}

/// Source: 3-6 Gaussian blobs, thresholded to a foreground whose
/// intensities span [0.2, 1]. Target: synthetic_contrast of the source.
inline SlicePair make_synthetic_pair(std::mt19937_64& rng, int size) {
  if (size < 16) throw std::invalid_argument("make_synthetic_pair: size must be >= 16");
  std::uniform_int_distribution<int> count(3, 6);
  std::uniform_real_distribution<double> centre(0.25 * size, 0.75 * size);
  std::uniform_real_distribution<double> sigma(size / 10.0, size / 5.0);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  struct Blob {
    double y, x, s, a;
  };
  std::vector<Blob> blobs(static_cast<std::size_t>(count(rng)));
  for (auto& b : blobs) {
    b.y = centre(rng);
    b.x = centre(rng);
    b.s = sigma(rng);
    b.a = amp(rng);
  }
  std::vector<double> raw(static_cast<std::size_t>(size) * size);
  double peak = 0.0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      double v = 0.0;
      for (const auto& b : blobs) v += b.a * std::exp(-((i - b.y) * (i - b.y) + (j - b.x) * (j - b.x)) / (2 * b.s * b.s));
      raw[static_cast<std::size_t>(i) * size + j] = v;
      peak = std::max(peak, v);
    }
  constexpr double kForeground = 0.1;
  SlicePair pair{Image2D(size, size), Image2D(size, size), std::nullopt};
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const double r = raw[k] / peak;
    pair.source[k] = r > kForeground ? static_cast<float>(0.2 + 0.8 * (r - kForeground) / (1.0 - kForeground)) : 0.0f;
    pair.target[k] = synthetic_contrast(pair.source[k]);
  }
  return pair;
}

/// Slice pairs from two co-registered modality volumes; a slice is kept
/// when both modalities carry information.
inline std::vector<SlicePair> slice_pairs(const Volume3D& source, const Volume3D& target, float threshold = 0.0f) {
  if (source.depth != target.depth || source.rows != target.rows || source.cols != target.cols)
    throw std::invalid_argument("slice_pairs: modality volumes differ in shape");
  std::vector<SlicePair> out;
  for (int d = 0; d < source.depth; ++d) {
    Image2D s = source.slice(d), t = target.slice(d);
    if (slice_has_information(s, threshold) && slice_has_information(t, threshold))
      out.push_back({std::move(s), std::move(t), std::nullopt});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patient-level splits

struct SplitFractions {
  double train = 1000.0 / 1251.0;
  double val = 51.0 / 1251.0;
  double test = 200.0 / 1251.0;
};

struct PatientSplit {
  std::vector<std::string> train, val, test;
};

/// Shuffles the sorted ids with `seed` and cuts them by the rounded fractions
/// (test takes the remainder).
inline PatientSplit split_patients(std::vector<std::string> ids, const SplitFractions& f, std::uint64_t seed) {
  const std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw std::invalid_argument("split_patients: duplicate patient ids");
  if (f.train < 0 || f.val < 0 || f.test < 0 || f.train + f.val + f.test <= 0)
    throw std::invalid_argument("split_patients: fractions must be nonnegative with a positive sum");
  std::sort(ids.begin(), ids.end());
  auto rng = derive_rng(seed, 0x5e11);
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(ids[i - 1], ids[pick(rng)]);
  }
  const double total = f.train + f.val + f.test;
  const auto n = static_cast<double>(ids.size());
  const auto n_train = std::min(ids.size(), static_cast<std::size_t>(std::llround(n * f.train / total)));
  const auto n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::llround(n * f.val / total)));
  PatientSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return s;
}

}  // namespace mrtrans
