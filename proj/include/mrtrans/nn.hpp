#pragma once

// Layer building blocks and the network interfaces shared by the generator,
// discriminator and registration models.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mrtrans/autodiff.hpp"
#include "mrtrans/conv.hpp"

namespace mrtrans::nn {

using ad::Var;

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

/// Convolution layer; uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init unless zero_init.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int padding, std::mt19937_64& rng, bool zero_init = false)
      : geometry_{stride, padding} {
    Tensor<T> w({out_ch, in_ch, kernel, kernel});
    Tensor<T> b({1, out_ch, 1, 1});
    if (!zero_init) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch) * kernel * kernel);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : w.vec()) v = static_cast<T>(dist(rng));
      for (auto& v : b.vec()) v = static_cast<T>(dist(rng));
    }
    weight_ = ad::parameter(std::move(w));
    bias_ = ad::parameter(std::move(b));
  }

  Var<T> operator()(const Var<T>& x) const { return ad::conv2d(x, weight_, bias_, geometry_); }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

 private:
  ad::ConvGeometry geometry_;
  Var<T> weight_;
  Var<T> bias_;
};

/// Stride-2 transposed convolution doubling the spatial size (k=3, p=1,
/// output padding 1).
template <typename T>
class UpConv2d {
 public:
  UpConv2d() = default;
  UpConv2d(int in_ch, int out_ch, std::mt19937_64& rng) {
    Tensor<T> w({in_ch, out_ch, 3, 3});
    Tensor<T> b({1, out_ch, 1, 1});
    const double bound = 1.0 / std::sqrt(static_cast<double>(out_ch) * 9);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w.vec()) v = static_cast<T>(dist(rng));
    for (auto& v : b.vec()) v = static_cast<T>(dist(rng));
    weight_ = ad::parameter(std::move(w));
    bias_ = ad::parameter(std::move(b));
  }

  Var<T> operator()(const Var<T>& x) const {
    return ad::conv_transpose2d(x, weight_, bias_, {2, 1}, {2 * x.shape()[2], 2 * x.shape()[3]});
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

 private:
  Var<T> weight_;
  Var<T> bias_;
};

/// Single-input network (generators, discriminators).
template <typename T>
class ImageNetwork {
 public:
  virtual ~ImageNetwork() = default;
  virtual Var<T> forward(const Var<T>& x) = 0;
  virtual ParameterList<T> parameters() const { return {}; }
};

/// Two-input network producing a (N,2,H,W) displacement field from (moving, fixed).
template <typename T>
class RegistrationNetwork {
 public:
  virtual ~RegistrationNetwork() = default;
  virtual Var<T> forward(const Var<T>& moving, const Var<T>& fixed) = 0;
  virtual ParameterList<T> parameters() const { return {}; }
};

/// Wraps an arbitrary differentiable function; used for analytic stand-ins in tests.
template <typename T>
class LambdaImageNetwork final : public ImageNetwork<T> {
 public:
  explicit LambdaImageNetwork(std::function<Var<T>(const Var<T>&)> fn) : fn_(std::move(fn)) {}
  Var<T> forward(const Var<T>& x) override { return fn_(x); }

 private:
  std::function<Var<T>(const Var<T>&)> fn_;
};

template <typename T>
class LambdaRegistrationNetwork final : public RegistrationNetwork<T> {
 public:
  explicit LambdaRegistrationNetwork(std::function<Var<T>(const Var<T>&, const Var<T>&)> fn) : fn_(std::move(fn)) {}
  Var<T> forward(const Var<T>& moving, const Var<T>& fixed) override { return fn_(moving, fixed); }

 private:
  std::function<Var<T>(const Var<T>&, const Var<T>&)> fn_;
};

template <typename T>
void zero_grad(const ParameterList<T>& params) {
  for (const auto& p : params) {
    auto v = p.var;
    v.zero_grad();
  }
}

template <typename T>
void set_requires_grad(const ParameterList<T>& params, bool on) {
  for (const auto& p : params) p.var.get()->requires_grad = on;
}

/// Excludes a parameter set from gradient computation for its lifetime.
template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(ParameterList<T> params) : params_(std::move(params)) { set_requires_grad(params_, false); }
  ~FreezeGuard() { set_requires_grad(params_, true); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParameterList<T> params_;
};

/// FNV-1a over parameter bytes; used to assert which networks a step touched.
template <typename T>
std::uint64_t parameter_hash(const ParameterList<T>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.var.value().data());
    for (std::size_t i = 0; i < p.var.value().size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace mrtrans::nn
