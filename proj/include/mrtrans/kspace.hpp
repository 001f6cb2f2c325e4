#pragma once

// Centered DFT magnitude, radial K-space masks and the masked spectral L1 loss.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "mrtrans/autodiff.hpp"
#include "mrtrans/tensor.hpp"

namespace mrtrans {

/// DFT magnitude with the zero-frequency bin at (rows/2, cols/2).
template <typename T>
struct Spectrum2D {
  Image<T> magnitude;
};

/// Binary disk of radius `radius` bins around the DC bin.
struct FrequencyMask {
  Image<std::uint8_t> mask;
  int radius = 0;

  int rows() const { return mask.rows(); }
  int cols() const { return mask.cols(); }

  Image<std::uint8_t> complement() const {
    Image<std::uint8_t> out(mask.rows(), mask.cols());
    for (std::size_t k = 0; k < mask.size(); ++k) out[k] = static_cast<std::uint8_t>(1 - mask[k]);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : mask.vec()) n += v;
    return n;
  }
};

enum class FrequencyPreset { off, f_low, f_hi, f_all };

inline std::string to_string(FrequencyPreset p) {
  switch (p) {
    case FrequencyPreset::off: return "off";
    case FrequencyPreset::f_low: return "f_low";
    case FrequencyPreset::f_hi: return "f_hi";
    case FrequencyPreset::f_all: return "f_all";
  }
  return "?";
}

inline FrequencyPreset parse_frequency_preset(const std::string& name) {
  if (name == "off" || name == "none") return FrequencyPreset::off;
  if (name == "f_low") return FrequencyPreset::f_low;
  if (name == "f_hi") return FrequencyPreset::f_hi;
  if (name == "f_all") return FrequencyPreset::f_all;
  throw std::invalid_argument("unknown frequency preset '" + name + "' (expected f_low, f_hi, f_all or off)");
}

/// Balance between the in-mask and out-of-mask terms; 1 keeps only the disk.
struct FrequencyWeight {
  double value = 1.0;

  FrequencyWeight() = default;
  explicit FrequencyWeight(double v) : value(v) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("FrequencyWeight: value must lie in [0,1]");
  }

  static FrequencyWeight preset(FrequencyPreset p) {
    switch (p) {
      case FrequencyPreset::f_low: return FrequencyWeight(1.0);
      case FrequencyPreset::f_hi: return FrequencyWeight(0.0);
      case FrequencyPreset::f_all: return FrequencyWeight(0.5);
      case FrequencyPreset::off: break;
    }
    throw std::invalid_argument("FrequencyWeight: preset 'off' has no weight");
  }
  static FrequencyWeight preset(const std::string& name) { return preset(parse_frequency_preset(name)); }
};

inline FrequencyMask build_radial_mask(int h, int w, int r) {
  if (h < 1 || w < 1) throw std::invalid_argument("build_radial_mask: sizes must be positive");
  if (r < 0) throw std::invalid_argument("build_radial_mask: radius must be nonnegative");
  FrequencyMask m{Image<std::uint8_t>(h, w), r};
  const long ci = h / 2, cj = w / 2;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const long di = i - ci, dj = j - cj;
      m.mask(i, j) = di * di + dj * dj <= static_cast<long>(r) * r ? 1 : 0;
    }
  return m;
}

namespace kspace {

template <typename T>
using ComplexMatrix = Eigen::Matrix<std::complex<T>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row k of the returned n x n matrix evaluates frequency (k - n/2) mod n, so
/// A_h * X * A_w^T is the DFT of X with DC already centered.
template <typename T>
ComplexMatrix<T> centered_dft_matrix(int n) {
  ComplexMatrix<T> a(n, n);
  const int half = n / 2;
  for (int k = 0; k < n; ++k) {
    const long freq = ((k - half) % n + n) % n;
    for (int p = 0; p < n; ++p) {
      // Reduce the phase index exactly before converting to an angle.
      const long idx = (freq * p) % n;
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(idx) / n;
      a(k, p) = std::complex<T>(static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle)));
    }
  }
  return a;
}

template <typename T>
struct DftPlan {
  int rows, cols;
  ComplexMatrix<T> a_rows, a_cols;

  DftPlan(int h, int w) : rows(h), cols(w), a_rows(centered_dft_matrix<T>(h)), a_cols(centered_dft_matrix<T>(w)) {}

  ComplexMatrix<T> forward(const T* img) const {
    using RealMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    const ComplexMatrix<T> x = RealMap(img, rows, cols).template cast<std::complex<T>>();
    return a_rows * x * a_cols.transpose();
  }

  // Real part of the adjoint transform, Re(A_h^H * Z * conj(A_w)).
  void adjoint_real(const ComplexMatrix<T>& z, T* out, T factor) const {
    const ComplexMatrix<T> g = a_rows.adjoint() * z * a_cols.conjugate();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) out[i * cols + j] += factor * g(i, j).real();
  }
};

// Per-bin weights w*M/(HW) + (1-w)*(1-M)/(HW).
template <typename T>
Image<T> bin_weights(const FrequencyMask& mask, FrequencyWeight w) {
  Image<T> out(mask.rows(), mask.cols());
  const double bins = static_cast<double>(mask.mask.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = static_cast<T>((mask.mask[k] ? w.value : 1.0 - w.value) / bins);
  return out;
}

template <typename T>
T smoothed_abs(const std::complex<T>& z) {
  return std::sqrt(z.real() * z.real() + z.imag() * z.imag() + T(1e-12));
}

// Loss of one image pair; if grad is non-null adds factor * dL/dgen to it.
template <typename T>
T pair_loss(const DftPlan<T>& plan, const T* gen, const T* target, const Image<T>& weights, T* grad, T factor) {
  const auto fg = plan.forward(gen);
  const auto ft = plan.forward(target);
  double loss = 0.0;
  ComplexMatrix<T> z;
  if (grad) z.resize(plan.rows, plan.cols);
  for (int i = 0; i < plan.rows; ++i)
    for (int j = 0; j < plan.cols; ++j) {
      const T sg = smoothed_abs(fg(i, j));
      const T st = smoothed_abs(ft(i, j));
      const T c = weights(i, j);
      loss += static_cast<double>(c) * std::abs(static_cast<double>(sg) - st);
      if (grad) {
        const T s = sg > st ? c : (sg < st ? -c : T(0));
        z(i, j) = fg(i, j) * (s / sg);
      }
    }
  if (grad) plan.adjoint_real(z, grad, factor);
  return static_cast<T>(loss);
}

}  // namespace kspace

template <typename T>
Spectrum2D<T> centered_dft_magnitude(const Image<T>& img) {
  if (img.rows() < 2 || img.cols() < 2) throw std::invalid_argument("centered_dft_magnitude: image must be at least 2x2");
  require_finite(img.pixels(), "centered_dft_magnitude");
  const kspace::DftPlan<T> plan(img.rows(), img.cols());
  const auto f = plan.forward(img.data());
  Spectrum2D<T> s{Image<T>(img.rows(), img.cols())};
  for (int i = 0; i < img.rows(); ++i)
    for (int j = 0; j < img.cols(); ++j) s.magnitude(i, j) = std::abs(f(i, j));
  return s;
}

/// w * mean(|S_gen - S_tgt| * M) + (1 - w) * mean(|S_gen - S_tgt| * (1 - M)),
/// means over all H*W bins.
template <typename T>
T frequency_loss(const Image<T>& gen, const Image<T>& target, const FrequencyMask& mask, FrequencyWeight w) {
  require_same_shape(gen, target, "frequency_loss");
  if (gen.rows() != mask.rows() || gen.cols() != mask.cols())
    throw std::invalid_argument("frequency_loss: mask shape differs from images");
  require_finite(gen.pixels(), "frequency_loss");
  require_finite(target.pixels(), "frequency_loss");
  const kspace::DftPlan<T> plan(gen.rows(), gen.cols());
  return kspace::pair_loss(plan, gen.data(), target.data(), kspace::bin_weights<T>(mask, w), static_cast<T*>(nullptr),
                           T(0));
}

/// Gradient of frequency_loss with respect to gen.
template <typename T>
Image<T> frequency_loss_gradient(const Image<T>& gen, const Image<T>& target, const FrequencyMask& mask,
                                 FrequencyWeight w) {
  require_same_shape(gen, target, "frequency_loss_gradient");
  if (gen.rows() != mask.rows() || gen.cols() != mask.cols())
    throw std::invalid_argument("frequency_loss_gradient: mask shape differs from images");
  const kspace::DftPlan<T> plan(gen.rows(), gen.cols());
  Image<T> grad(gen.rows(), gen.cols());
  kspace::pair_loss(plan, gen.data(), target.data(), kspace::bin_weights<T>(mask, w), grad.data(), T(1));
  return grad;
}

namespace ad {

/// Batch mean of frequency_loss over (N,1,H,W) tensors. Only `gen` receives
/// gradient; the target is treated as data.
template <typename T>
Var<T> frequency_loss(const Var<T>& gen, const Var<T>& target, const FrequencyMask& mask, FrequencyWeight w) {
  detail::require_same(gen, target, "ad::frequency_loss");
  const Shape s = gen.shape();
  if (s[1] != 1 || s[2] != mask.rows() || s[3] != mask.cols())
    throw std::invalid_argument("ad::frequency_loss: expected (N,1," + std::to_string(mask.rows()) + "," +
                                std::to_string(mask.cols()) + ") inputs, got " + to_string(s));
  auto plan = std::make_shared<kspace::DftPlan<T>>(s[2], s[3]);
  auto weights = std::make_shared<Image<T>>(kspace::bin_weights<T>(mask, w));
  double total = 0.0;
  for (int n = 0; n < s[0]; ++n)
    total += kspace::pair_loss(*plan, gen.value().data() + gen.value().offset(n, 0, 0, 0),
                               target.value().data() + target.value().offset(n, 0, 0, 0), *weights,
                               static_cast<T*>(nullptr), T(0));
  const T value = static_cast<T>(total / s[0]);
  return detail::make_result<T>(Tensor<T>({1, 1, 1, 1}, value), {gen}, [plan, weights, s, target](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& x = self.parents[0]->value;
    const T factor = self.grad[0] / T(s[0]);
    for (int n = 0; n < s[0]; ++n)
      kspace::pair_loss(*plan, x.data() + x.offset(n, 0, 0, 0), target.value().data() + target.value().offset(n, 0, 0, 0),
                        *weights, g.data() + g.offset(n, 0, 0, 0), factor);
  });
}

}  // namespace ad

}  // namespace mrtrans
