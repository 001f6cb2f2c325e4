#pragma once

#include <algorithm>
#include <cmath>

namespace mrtrans::kernels {

/// Bilinear sampling position with border replication. clamp_* records that
/// the coordinate left the grid, where the sample is locally constant.
template <typename T>
struct BilinearTap {
  int y0, y1, x0, x1;
  T fy, fx;
  bool clamp_y, clamp_x;
};

template <typename T>
BilinearTap<T> bilinear_tap(T yc, T xc, int h, int w) {
  BilinearTap<T> t{};
  t.clamp_y = yc < T(0) || yc > T(h - 1);
  t.clamp_x = xc < T(0) || xc > T(w - 1);
  yc = std::clamp(yc, T(0), T(h - 1));
  xc = std::clamp(xc, T(0), T(w - 1));
  t.y0 = static_cast<int>(std::floor(yc));
  t.x0 = static_cast<int>(std::floor(xc));
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.fy = yc - T(t.y0);
  t.fx = xc - T(t.x0);
  return t;
}

template <typename T, typename P>
T bilinear_sample(const P* img, int h, int w, T yc, T xc) {
  const auto t = bilinear_tap<T>(yc, xc, h, w);
  const T v00 = img[t.y0 * w + t.x0], v01 = img[t.y0 * w + t.x1];
  const T v10 = img[t.y1 * w + t.x0], v11 = img[t.y1 * w + t.x1];
  return (T(1) - t.fy) * ((T(1) - t.fx) * v00 + t.fx * v01) + t.fy * ((T(1) - t.fx) * v10 + t.fx * v11);
}

}  // namespace mrtrans::kernels
