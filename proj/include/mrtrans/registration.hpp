#pragma once

// Deformable registration: displacement fields, bilinear warping with border
// replication, the diffusion smoothness penalty, the correction loss and the
// U-Net that estimates a field from a (moving, fixed) image pair.

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrtrans/interp.hpp"
#include "mrtrans/nn.hpp"
#include "mrtrans/reduce.hpp"
#include "mrtrans/tensor.hpp"

namespace mrtrans {

/// Per-pixel displacement (dy, dx) in pixel units. output[p] samples the
/// moving image at p + field[p].
template <typename T>
struct DisplacementField {
  Image<T> dy;
  Image<T> dx;

  DisplacementField() = default;
  DisplacementField(int rows, int cols) : dy(rows, cols), dx(rows, cols) {}
  DisplacementField(Image<T> dy_, Image<T> dx_) : dy(std::move(dy_)), dx(std::move(dx_)) {
    if (!dy.same_shape(dx)) throw std::invalid_argument("DisplacementField: component shape mismatch");
  }

  static DisplacementField constant(int rows, int cols, T vy, T vx) {
    return DisplacementField(Image<T>(rows, cols, vy), Image<T>(rows, cols, vx));
  }

  int rows() const { return dy.rows(); }
  int cols() const { return dy.cols(); }

  bool finite() const {
    for (T v : dy.vec())
      if (!std::isfinite(v)) return false;
    for (T v : dx.vec())
      if (!std::isfinite(v)) return false;
    return true;
  }
};

namespace kernels {

/// Bilinear warp of one plane; samples outside the grid replicate the border.
template <typename T>
void resample_plane(const T* img, const T* dy, const T* dx, int h, int w, T* out) {
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * w + j;
      out[p] = bilinear_sample<T>(img, h, w, T(i) + dy[p], T(j) + dx[p]);
    }
}

/// Accumulates gradients of a warp; any of the output pointers may be null.
template <typename T>
void resample_plane_backward(const T* img, const T* dy, const T* dx, int h, int w, const T* gout, T* gimg, T* gdy,
                             T* gdx) {
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * w + j;
      const T g = gout[p];
      const auto t = bilinear_tap<T>(T(i) + dy[p], T(j) + dx[p], h, w);
      const int a00 = t.y0 * w + t.x0, a01 = t.y0 * w + t.x1, a10 = t.y1 * w + t.x0, a11 = t.y1 * w + t.x1;
      if (gimg) {
        gimg[a00] += g * (T(1) - t.fy) * (T(1) - t.fx);
        gimg[a01] += g * (T(1) - t.fy) * t.fx;
        gimg[a10] += g * t.fy * (T(1) - t.fx);
        gimg[a11] += g * t.fy * t.fx;
      }
      if (gdy && !t.clamp_y)
        gdy[p] += g * ((T(1) - t.fx) * (img[a10] - img[a00]) + t.fx * (img[a11] - img[a01]));
      if (gdx && !t.clamp_x)
        gdx[p] += g * ((T(1) - t.fy) * (img[a01] - img[a00]) + t.fy * (img[a11] - img[a10]));
    }
}

/// Sums of squared forward differences of one plane along rows and columns.
template <typename T>
void forward_difference_energy(const T* f, int h, int w, T& vertical, T& horizontal) {
  vertical = T(0);
  horizontal = T(0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const T v = f[i * w + j];
      if (i + 1 < h) vertical += (f[(i + 1) * w + j] - v) * (f[(i + 1) * w + j] - v);
      if (j + 1 < w) horizontal += (f[i * w + j + 1] - v) * (f[i * w + j + 1] - v);
    }
}

template <typename T>
void forward_difference_energy_backward(const T* f, int h, int w, T g_vertical, T g_horizontal, T* gf) {
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const T v = f[i * w + j];
      if (i + 1 < h) {
        const T d = T(2) * g_vertical * (f[(i + 1) * w + j] - v);
        gf[(i + 1) * w + j] += d;
        gf[i * w + j] -= d;
      }
      if (j + 1 < w) {
        const T d = T(2) * g_horizontal * (f[i * w + j + 1] - v);
        gf[i * w + j + 1] += d;
        gf[i * w + j] -= d;
      }
    }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Image-level API

template <typename T>
Image<T> resample(const Image<T>& img, const DisplacementField<T>& field) {
  if (img.rows() != field.rows() || img.cols() != field.cols())
    throw std::invalid_argument("resample: image and field shapes differ");
  if (!field.finite()) throw std::invalid_argument("resample: non-finite displacement field");
  Image<T> out(img.rows(), img.cols());
  kernels::resample_plane(img.data(), field.dy.data(), field.dx.data(), img.rows(), img.cols(), out.data());
  return out;
}

/// Mean squared forward difference: (mean over vertical differences of both
/// components + mean over horizontal differences of both components) / 2.
template <typename T>
T smoothness_loss(const DisplacementField<T>& field) {
  if (!field.finite()) throw std::invalid_argument("smoothness_loss: non-finite displacement field");
  const int h = field.rows(), w = field.cols();
  T v_total = T(0), h_total = T(0);
  for (const Image<T>* comp : {&field.dy, &field.dx}) {
    T v, hz;
    kernels::forward_difference_energy(comp->data(), h, w, v, hz);
    v_total += v;
    h_total += hz;
  }
  const T v_count = T(2) * T(h - 1) * T(w);
  const T h_count = T(2) * T(h) * T(w - 1);
  return ((v_count > 0 ? v_total / v_count : T(0)) + (h_count > 0 ? h_total / h_count : T(0))) / T(2);
}

template <typename T>
T mean_absolute_error(const Image<T>& a, const Image<T>& b) {
  require_same_shape(a, b, "mean_absolute_error");
  return sum_abs_diff(a.data(), b.data(), a.size()) / T(a.size());
}

/// mean |target - resample(gen, field)|.
template <typename T>
T correction_loss(const Image<T>& gen, const Image<T>& target, const DisplacementField<T>& field) {
  require_same_shape(gen, target, "correction_loss");
  return mean_absolute_error(resample(gen, field), target);
}

// ---------------------------------------------------------------------------
// Graph ops

namespace ad {

/// img: (N,1,H,W); field: (N,2,H,W) with channel 0 = dy, 1 = dx.
template <typename T>
Var<T> resample(const Var<T>& img, const Var<T>& field) {
  const Shape is = img.shape();
  const Shape fs = field.shape();
  if (is[1] != 1 || fs[1] != 2 || is[0] != fs[0] || is[2] != fs[2] || is[3] != fs[3])
    throw std::invalid_argument("ad::resample: incompatible shapes " + to_string(is) + " and " + to_string(fs));
  Tensor<T> out(is);
  for (int n = 0; n < is[0]; ++n)
    kernels::resample_plane(img.value().data() + img.value().offset(n, 0, 0, 0),
                            field.value().data() + field.value().offset(n, 0, 0, 0),
                            field.value().data() + field.value().offset(n, 1, 0, 0), is[2], is[3],
                            out.data() + out.offset(n, 0, 0, 0));
  return detail::make_result<T>(std::move(out), {img, field}, [is](Node<T>& self) {
    auto& pi = self.parents[0];
    auto& pf = self.parents[1];
    T* gi = pi->requires_grad ? pi->ensure_grad().data() : nullptr;
    T* gf = pf->requires_grad ? pf->ensure_grad().data() : nullptr;
    for (int n = 0; n < is[0]; ++n) {
      const std::size_t io = pi->value.offset(n, 0, 0, 0);
      const std::size_t f0 = pf->value.offset(n, 0, 0, 0), f1 = pf->value.offset(n, 1, 0, 0);
      kernels::resample_plane_backward(pi->value.data() + io, pf->value.data() + f0, pf->value.data() + f1, is[2],
                                       is[3], self.grad.data() + io, gi ? gi + io : nullptr, gf ? gf + f0 : nullptr,
                                       gf ? gf + f1 : nullptr);
    }
  });
}

/// Batch smoothness penalty of an (N,2,H,W) field; same normalization as
/// mrtrans::smoothness_loss with the batch folded into the means.
template <typename T>
Var<T> smoothness(const Var<T>& field) {
  const Shape fs = field.shape();
  if (fs[1] != 2) throw std::invalid_argument("ad::smoothness: field must have 2 channels");
  const int h = fs[2], w = fs[3];
  T v_total = T(0), h_total = T(0);
  for (int n = 0; n < fs[0]; ++n)
    for (int c = 0; c < 2; ++c) {
      T v, hz;
      kernels::forward_difference_energy(field.value().data() + field.value().offset(n, c, 0, 0), h, w, v, hz);
      v_total += v;
      h_total += hz;
    }
  const T v_count = T(2) * T(fs[0]) * T(h - 1) * T(w);
  const T h_count = T(2) * T(fs[0]) * T(h) * T(w - 1);
  const T v_scale = v_count > 0 ? T(0.5) / v_count : T(0);
  const T h_scale = h_count > 0 ? T(0.5) / h_count : T(0);
  const T value = v_total * v_scale + h_total * h_scale;
  return detail::make_result<T>(Tensor<T>({1, 1, 1, 1}, value), {field}, [=](Node<T>& self) {
    auto& pf = self.parents[0];
    auto& g = pf->ensure_grad();
    for (int n = 0; n < fs[0]; ++n)
      for (int c = 0; c < 2; ++c) {
        const std::size_t o = pf->value.offset(n, c, 0, 0);
        kernels::forward_difference_energy_backward(pf->value.data() + o, h, w, self.grad[0] * v_scale,
                                                    self.grad[0] * h_scale, g.data() + o);
      }
  });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Registration network

struct RegistrationNetworkSpec {
  std::vector<int> encoder_channels{16, 32, 32, 32};
  std::vector<int> decoder_channels{32, 32, 32, 16};
};

/// U-Net over the 2-channel (moving, fixed) stack. Each encoder level halves
/// the resolution; each decoder level convolves at its resolution and then
/// upsamples, concatenating the matching skip. The final convolution is
/// zero-initialized so a fresh network predicts the identity warp.
template <typename T>
class RegistrationUNet final : public nn::RegistrationNetwork<T> {
 public:
  RegistrationUNet(const RegistrationNetworkSpec& spec, std::mt19937_64& rng) : spec_(spec) {
    const auto& enc = spec.encoder_channels;
    const auto& dec = spec.decoder_channels;
    if (enc.empty() || enc.size() != dec.size())
      throw std::invalid_argument("RegistrationNetworkSpec: encoder and decoder need the same nonzero depth");
    int in = 2;
    for (int c : enc) {
      encoder_.emplace_back(in, c, 3, 2, 1, rng);
      in = c;
    }
    // Decoder level d works at encoder level (depth-1-d); its input is the
    // previous decoder output concatenated with that level's encoder output.
    const std::size_t depth = enc.size();
    for (std::size_t d = 0; d < depth; ++d) {
      const int skip = d == 0 ? 0 : enc[depth - 1 - d];
      decoder_.emplace_back(in + skip, dec[d], 3, 1, 1, rng);
      in = dec[d];
    }
    head_ = nn::Conv2d<T>(in + 2, 2, 3, 1, 1, rng, /*zero_init=*/true);
  }

  ad::Var<T> forward(const ad::Var<T>& moving, const ad::Var<T>& fixed) override {
    detail_check(moving, fixed);
    const auto input = ad::concat_channels(moving, fixed);
    std::vector<ad::Var<T>> skips;
    auto h = input;
    for (auto& conv : encoder_) {
      h = ad::leaky_relu(conv(h), T(0.2));
      skips.push_back(h);
    }
    const std::size_t depth = encoder_.size();
    for (std::size_t d = 0; d < depth; ++d) {
      if (d > 0) h = ad::concat_channels(h, skips[depth - 1 - d]);
      h = ad::upsample2x(ad::leaky_relu(decoder_[d](h), T(0.2)));
    }
    return head_(ad::concat_channels(h, input));
  }

  nn::ParameterList<T> parameters() const override {
    nn::ParameterList<T> out;
    for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect("enc" + std::to_string(i), out);
    for (std::size_t i = 0; i < decoder_.size(); ++i) decoder_[i].collect("dec" + std::to_string(i), out);
    head_.collect("head", out);
    return out;
  }

  const RegistrationNetworkSpec& spec() const { return spec_; }

 private:
  void detail_check(const ad::Var<T>& moving, const ad::Var<T>& fixed) const {
    if (moving.shape() != fixed.shape())
      throw std::invalid_argument("RegistrationUNet: moving " + to_string(moving.shape()) + " and fixed " +
                                  to_string(fixed.shape()) + " differ");
    const int div = 1 << encoder_.size();
    if (moving.shape()[1] != 1 || moving.shape()[2] % div != 0 || moving.shape()[3] % div != 0)
      throw std::invalid_argument("RegistrationUNet: single-channel input with sides divisible by " +
                                  std::to_string(div) + " required");
  }

  RegistrationNetworkSpec spec_;
  std::vector<nn::Conv2d<T>> encoder_;
  std::vector<nn::Conv2d<T>> decoder_;
  nn::Conv2d<T> head_;
};

/// Runs a registration network on a single image pair.
template <typename T>
DisplacementField<T> estimate_dvf(const Image<T>& moving, const Image<T>& fixed, nn::RegistrationNetwork<T>& net) {
  require_same_shape(moving, fixed, "estimate_dvf");
  auto m = ad::constant(stack_images<T, T>(std::span<const Image<T>>(&moving, 1)));
  auto f = ad::constant(stack_images<T, T>(std::span<const Image<T>>(&fixed, 1)));
  auto out = net.forward(m, f);
  return DisplacementField<T>(image_from_plane<T>(out.value(), 0, 0), image_from_plane<T>(out.value(), 0, 1));
}

}  // namespace mrtrans
