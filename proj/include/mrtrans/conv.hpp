#pragma once

// 2D convolution and transposed convolution as per-sample im2col + GEMM.

#include <Eigen/Core>

#include "mrtrans/autodiff.hpp"
#include "mrtrans/reduce.hpp"

namespace mrtrans::ad {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Copies one (C,H,W) sample into a zero-bordered (C,H+2p,W+2p) buffer.
template <typename T>
const T* padded(const T* src, int ch, int h, int w, int p, std::vector<T>& buf) {
  if (p == 0) return src;
  const int hp = h + 2 * p, wp = w + 2 * p;
  buf.assign(static_cast<std::size_t>(ch) * hp * wp, T(0));
  for (int c = 0; c < ch; ++c)
    for (int i = 0; i < h; ++i)
      std::copy_n(src + (static_cast<long>(c) * h + i) * w, w,
                  buf.data() + (static_cast<long>(c) * hp + i + p) * wp + p);
  return buf.data();
}

// Lowers one zero-bordered (C,Hp,Wp) sample to a (C*k*k) x (Ho*Wo) matrix.
template <typename T>
void im2col(const T* pad, int ch, int hp, int wp, int k, int stride, int ho, int wo, T* cols) {
  const long hw_out = static_cast<long>(ho) * wo;
  for (int c = 0; c < ch; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((static_cast<long>(c) * k + ki) * k + kj) * hw_out;
        for (int oi = 0; oi < ho; ++oi) {
          const T* __restrict s = pad + (static_cast<long>(c) * hp + oi * stride + ki) * wp + kj;
          T* __restrict d = row + static_cast<long>(oi) * wo;
          if (stride == 1) {
            for (int oj = 0; oj < wo; ++oj) d[oj] = s[oj];
          } else {
            for (int oj = 0; oj < wo; ++oj) d[oj] = s[oj * stride];
          }
        }
      }
}

// Adjoint of im2col: scatter-adds the matrix into a zero-bordered buffer.
template <typename T>
void col2im(const T* cols, int ch, int hp, int wp, int k, int stride, int ho, int wo, T* pad) {
  const long hw_out = static_cast<long>(ho) * wo;
  for (int c = 0; c < ch; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((static_cast<long>(c) * k + ki) * k + kj) * hw_out;
        for (int oi = 0; oi < ho; ++oi) {
          T* __restrict d = pad + (static_cast<long>(c) * hp + oi * stride + ki) * wp + kj;
          const T* __restrict s = row + static_cast<long>(oi) * wo;
          if (stride == 1) {
            for (int oj = 0; oj < wo; ++oj) d[oj] += s[oj];
          } else {
            for (int oj = 0; oj < wo; ++oj) d[oj * stride] += s[oj];
          }
        }
      }
}

// Adds the interior of a zero-bordered buffer into a (C,H,W) sample.
template <typename T>
void add_unpadded(const T* pad, int ch, int h, int w, int p, T* dst) {
  const int hp = h + 2 * p, wp = w + 2 * p;
  for (int c = 0; c < ch; ++c)
    for (int i = 0; i < h; ++i) {
      const T* __restrict s = pad + (static_cast<long>(c) * hp + i + p) * wp + p;
      T* __restrict d = dst + (static_cast<long>(c) * h + i) * w;
      for (int j = 0; j < w; ++j) d[j] += s[j];
    }
}

// Scatter-adds cols into one (C,H,W) sample.
template <typename T>
void col2im_add(const T* cols, int ch, int h, int w, int k, ConvGeometry g, int ho, int wo, std::vector<T>& buf,
                T* dst) {
  const int hp = h + 2 * g.padding, wp = w + 2 * g.padding;
  if (g.padding == 0) {
    col2im(cols, ch, hp, wp, k, g.stride, ho, wo, dst);
    return;
  }
  buf.assign(static_cast<std::size_t>(ch) * hp * wp, T(0));
  col2im(cols, ch, hp, wp, k, g.stride, ho, wo, buf.data());
  add_unpadded(buf.data(), ch, h, w, g.padding, dst);
}

template <typename T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
  const std::size_t plane = static_cast<std::size_t>(out.h()) * out.w();
  for (int n = 0; n < out.n(); ++n)
    for (int o = 0; o < out.c(); ++o) {
      const T b = bias[o];
      T* p = out.data() + out.offset(n, o, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
}

template <typename T>
void accumulate_bias_grad(const Tensor<T>& grad, Tensor<T>& db) {
  const std::size_t plane = static_cast<std::size_t>(grad.h()) * grad.w();
  for (int o = 0; o < grad.c(); ++o) {
    T acc = T(0);
    for (int n = 0; n < grad.n(); ++n) acc += sum(grad.data() + grad.offset(n, o, 0, 0), plane);
    db[o] += acc;
  }
}

}  // namespace detail

/// weight: (out_ch, in_ch, k, k); bias: (1, out_ch, 1, 1).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const int out_ch = ws[0], k = ws[2];
  if (ws[1] != xs[1] || ws[2] != ws[3])
    throw std::invalid_argument("conv2d: weight " + to_string(ws) + " incompatible with input " + to_string(xs));
  if (bias.shape() != Shape{1, out_ch, 1, 1}) throw std::invalid_argument("conv2d: bad bias shape");
  const int ho = (xs[2] + 2 * g.padding - k) / g.stride + 1;
  const int wo = (xs[3] + 2 * g.padding - k) / g.stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input too small for kernel");

  using Mat = detail::RowMatrix<T>;
  const long kk = static_cast<long>(xs[1]) * k * k;
  const long hw_out = static_cast<long>(ho) * wo;
  const long in_stride = static_cast<long>(xs[1]) * xs[2] * xs[3];
  const int hp = xs[2] + 2 * g.padding, wp = xs[3] + 2 * g.padding;
  Eigen::Map<const Mat> wmat(weight.value().data(), out_ch, kk);
  Tensor<T> out = Tensor<T>::uninitialized({xs[0], out_ch, ho, wo});
  // Lowered inputs are kept for the weight gradient.
  const bool keep = weight.requires_grad();
  auto cols = std::make_shared<std::vector<T, mrtrans::detail::DefaultInitAllocator<T>>>(kk * hw_out * (keep ? xs[0] : 1));
  std::vector<T> buf;
  for (int n = 0; n < xs[0]; ++n) {
    T* c = cols->data() + (keep ? n * kk * hw_out : 0);
    const T* pad = detail::padded(x.value().data() + n * in_stride, xs[1], xs[2], xs[3], g.padding, buf);
    detail::im2col(pad, xs[1], hp, wp, k, g.stride, ho, wo, c);
    Eigen::Map<Mat> dst(out.data() + out.offset(n, 0, 0, 0), out_ch, hw_out);
    dst.noalias() = wmat * Eigen::Map<const Mat>(c, kk, hw_out);
  }
  if (!keep) cols.reset();
  detail::add_bias(out, bias.value());

  return detail::make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    Eigen::Map<const Mat> wmat(pw->value.data(), out_ch, kk);
    Mat dcols;
    std::vector<T> buf;
    for (int n = 0; n < xs[0]; ++n) {
      Eigen::Map<const Mat> dout(self.grad.data() + self.grad.offset(n, 0, 0, 0), out_ch, hw_out);
      if (pw->requires_grad && cols) {
        Eigen::Map<Mat> dw(pw->ensure_grad().data(), out_ch, kk);
        dw.noalias() += dout * Eigen::Map<const Mat>(cols->data() + n * kk * hw_out, kk, hw_out).transpose();
      }
      if (px->requires_grad) {
        dcols.noalias() = wmat.transpose() * dout;
        detail::col2im_add(dcols.data(), xs[1], xs[2], xs[3], k, g, ho, wo, buf,
                           px->ensure_grad().data() + n * in_stride);
      }
    }
    if (pb->requires_grad) detail::accumulate_bias_grad(self.grad, pb->ensure_grad());
  });
}

/// Transposed convolution producing an output of `out_hw`; the adjoint of a
/// conv2d with the same geometry mapping out_hw back to the input size.
/// weight: (in_ch, out_ch, k, k); bias: (1, out_ch, 1, 1).
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g,
                        std::array<int, 2> out_hw) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const int in_ch = ws[0], out_ch = ws[1], k = ws[2];
  if (in_ch != xs[1] || ws[2] != ws[3])
    throw std::invalid_argument("conv_transpose2d: weight " + to_string(ws) + " incompatible with input " +
                                to_string(xs));
  if (bias.shape() != Shape{1, out_ch, 1, 1}) throw std::invalid_argument("conv_transpose2d: bad bias shape");
  const int oh = out_hw[0], ow = out_hw[1];
  if ((oh + 2 * g.padding - k) / g.stride + 1 != xs[2] || (ow + 2 * g.padding - k) / g.stride + 1 != xs[3])
    throw std::invalid_argument("conv_transpose2d: output size inconsistent with geometry");

  using Mat = detail::RowMatrix<T>;
  const long kk = static_cast<long>(out_ch) * k * k;
  const long hw_in = static_cast<long>(xs[2]) * xs[3];
  const long out_stride = static_cast<long>(out_ch) * oh * ow;
  Eigen::Map<const Mat> wmat(weight.value().data(), in_ch, kk);
  Tensor<T> out({xs[0], out_ch, oh, ow});
  Mat cols;
  std::vector<T> buf;
  for (int n = 0; n < xs[0]; ++n) {
    Eigen::Map<const Mat> src(x.value().data() + x.value().offset(n, 0, 0, 0), in_ch, hw_in);
    cols.noalias() = wmat.transpose() * src;
    detail::col2im_add(cols.data(), out_ch, oh, ow, k, g, xs[2], xs[3], buf, out.data() + n * out_stride);
  }
  detail::add_bias(out, bias.value());

  return detail::make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    Eigen::Map<const Mat> wmat(pw->value.data(), in_ch, kk);
    Mat cols(kk, hw_in);
    std::vector<T> buf;
    const int hp = oh + 2 * g.padding, wp = ow + 2 * g.padding;
    for (int n = 0; n < xs[0]; ++n) {
      const T* pad = detail::padded(self.grad.data() + n * out_stride, out_ch, oh, ow, g.padding, buf);
      detail::im2col(pad, out_ch, hp, wp, k, g.stride, xs[2], xs[3], cols.data());
      if (pw->requires_grad) {
        Eigen::Map<const Mat> src(px->value.data() + px->value.offset(n, 0, 0, 0), in_ch, hw_in);
        Eigen::Map<Mat> dw(pw->ensure_grad().data(), in_ch, kk);
        dw.noalias() += src * cols.transpose();
      }
      if (px->requires_grad) {
        Eigen::Map<Mat> dx(px->ensure_grad().data() + px->value.offset(n, 0, 0, 0), in_ch, hw_in);
        dx.noalias() += wmat * cols;
      }
    }
    if (pb->requires_grad) detail::accumulate_bias_grad(self.grad, pb->ensure_grad());
  });
}

}  // namespace mrtrans::ad
