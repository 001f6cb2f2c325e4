#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <memory>
#include <type_traits>
#include <vector>

namespace mrtrans {

// (batch, channels, rows, cols)
using Shape = std::array<int, 4>;

inline std::size_t shape_size(const Shape& s) {
  return static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3];
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s[0] << "," << s[1] << "," << s[2] << "," << s[3] << ")";
  return os.str();
}

namespace detail {
// Leaves elements uninitialized on resize so buffers that are about to be
// overwritten skip the zero fill.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};
}  // namespace detail

/// Dense NCHW tensor with value semantics.
template <typename T>
class Tensor {
 public:
  Tensor() : shape_{0, 0, 0, 0} {}
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(checked(shape)), data_(shape_size(shape), fill) {}

  /// Tensor whose contents are unspecified until written.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    t.shape_ = checked(shape);
    t.data_.resize(shape_size(shape));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> vec() { return data_; }
  std::span<const T> vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int b, int ch, int i, int j) const {
    return ((static_cast<std::size_t>(b) * shape_[1] + ch) * shape_[2] + i) * shape_[3] + j;
  }
  T& at(int b, int ch, int i, int j) { return data_[offset(b, ch, i, j)]; }
  const T& at(int b, int ch, int i, int j) const { return data_[offset(b, ch, i, j)]; }

  std::span<T> plane(int b, int ch) {
    return {data_.data() + offset(b, ch, 0, 0), static_cast<std::size_t>(shape_[2]) * shape_[3]};
  }
  std::span<const T> plane(int b, int ch) const {
    return {data_.data() + offset(b, ch, 0, 0), static_cast<std::size_t>(shape_[2]) * shape_[3]};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  static Shape checked(Shape shape) {
    for (int d : shape)
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension in " + to_string(shape));
    return shape;
  }

  Shape shape_;
  std::vector<T, detail::DefaultInitAllocator<T>> data_;
};

/// Single-channel row-major image.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int rows, int cols, T fill = T(0)) : rows_(rows), cols_(cols), px_(checked(rows, cols), fill) {}
  Image(int rows, int cols, std::vector<T> px) : rows_(rows), cols_(cols), px_(std::move(px)) {
    if (px_.size() != checked(rows, cols)) throw std::invalid_argument("Image: pixel count does not match shape");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return px_.size(); }
  bool empty() const { return px_.empty(); }

  T& operator()(int i, int j) { return px_[static_cast<std::size_t>(i) * cols_ + j]; }
  const T& operator()(int i, int j) const { return px_[static_cast<std::size_t>(i) * cols_ + j]; }
  T& operator[](std::size_t k) { return px_[k]; }
  const T& operator[](std::size_t k) const { return px_[k]; }

  T* data() { return px_.data(); }
  const T* data() const { return px_.data(); }
  std::span<T> pixels() { return px_; }
  std::span<const T> pixels() const { return px_; }
  std::vector<T>& vec() { return px_; }
  const std::vector<T>& vec() const { return px_; }

  bool same_shape(const Image& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Image& o) const { return same_shape(o) && px_ == o.px_; }

  template <typename U>
  Image<U> cast() const {
    Image<U> out(rows_, cols_);
    std::transform(px_.begin(), px_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  static std::size_t checked(int rows, int cols) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Image: negative dimension");
    return static_cast<std::size_t>(rows) * cols;
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> px_;
};

using Image2D = Image<float>;

template <typename T>
void require_finite(std::span<const T> values, const char* what) {
  for (T v : values)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

template <typename T>
void require_same_shape(const Image<T>& a, const Image<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols();
    throw std::invalid_argument(os.str());
  }
}

/// Stack images into an (N,1,H,W) tensor.
template <typename T, typename U>
Tensor<T> stack_images(std::span<const Image<U>> images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty batch");
  const int h = images[0].rows(), w = images[0].cols();
  Tensor<T> out({static_cast<int>(images.size()), 1, h, w});
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b].rows() != h || images[b].cols() != w) throw std::invalid_argument("stack_images: ragged batch");
    auto dst = out.plane(static_cast<int>(b), 0);
    std::transform(images[b].vec().begin(), images[b].vec().end(), dst.begin(),
                   [](U v) { return static_cast<T>(v); });
  }
  return out;
}

template <typename U, typename T>
Image<U> image_from_plane(const Tensor<T>& t, int b, int ch = 0) {
  Image<U> out(t.h(), t.w());
  auto src = t.plane(b, ch);
  std::transform(src.begin(), src.end(), out.data(), [](T v) { return static_cast<U>(v); });
  return out;
}

}  // namespace mrtrans
