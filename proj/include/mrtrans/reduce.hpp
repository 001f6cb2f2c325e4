#pragma once

// Reductions with a fixed 16-lane accumulation order. The result depends only
// on the values and their count, never on memory alignment, so runs are
// bit-reproducible while still vectorizing.

#include <cstddef>

#include <Eigen/Core>

namespace mrtrans {

namespace detail {
constexpr int kLanes = 16;

template <typename T>
using Lanes = Eigen::Array<T, kLanes, 1>;

template <typename T>
using LaneMap = Eigen::Map<const Lanes<T>, Eigen::Unaligned>;

template <typename T>
T fold_lanes(Lanes<T> acc, T tail) {
  for (int width = kLanes / 2; width > 0; width /= 2)
    for (int l = 0; l < width; ++l) acc[l] += acc[l + width];
  return acc[0] + tail;
}

// block(i) returns the 16-lane term for elements [i, i+16); scalar(i) one term.
template <typename T, typename Block, typename Scalar>
T lane_reduce(std::size_t n, Block&& block, Scalar&& scalar) {
  Lanes<T> acc = Lanes<T>::Zero();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) acc += block(i);
  T tail = T(0);
  for (; i < n; ++i) tail += scalar(i);
  return fold_lanes(acc, tail);
}
}  // namespace detail

template <typename T>
T sum(const T* x, std::size_t n) {
  using detail::LaneMap;
  return detail::lane_reduce<T>(
      n, [x](std::size_t i) -> detail::Lanes<T> { return LaneMap<T>(x + i); }, [x](std::size_t i) { return x[i]; });
}

template <typename T>
T sum_squared_deviation(const T* x, std::size_t n, T center) {
  using detail::LaneMap;
  return detail::lane_reduce<T>(
      n, [x, center](std::size_t i) -> detail::Lanes<T> { return (LaneMap<T>(x + i) - center).square(); },
      [x, center](std::size_t i) { return (x[i] - center) * (x[i] - center); });
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  using detail::LaneMap;
  return detail::lane_reduce<T>(
      n, [a, b](std::size_t i) -> detail::Lanes<T> { return LaneMap<T>(a + i) * LaneMap<T>(b + i); },
      [a, b](std::size_t i) { return a[i] * b[i]; });
}

template <typename T>
T sum_abs_diff(const T* a, const T* b, std::size_t n) {
  using detail::LaneMap;
  return detail::lane_reduce<T>(
      n, [a, b](std::size_t i) -> detail::Lanes<T> { return (LaneMap<T>(a + i) - LaneMap<T>(b + i)).abs(); },
      [a, b](std::size_t i) { return a[i] > b[i] ? a[i] - b[i] : b[i] - a[i]; });
}

}  // namespace mrtrans
