#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "mrtrans/nn.hpp"

namespace mrtrans {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

/// Adam over a fixed, named parameter list.
template <typename T>
class Adam {
 public:
  Adam(nn::ParameterList<T> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      if (m_.count(p.name)) throw std::invalid_argument("Adam: duplicate parameter name " + p.name);
      m_.emplace(p.name, Tensor<T>(p.var.shape()));
      v_.emplace(p.name, Tensor<T>(p.var.shape()));
    }
  }

  void zero_grad() { nn::zero_grad(params_); }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step = static_cast<T>(opt_.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(opt_.eps), wd = static_cast<T>(opt_.weight_decay);
    for (const auto& p : params_) {
      auto var = p.var;
      Tensor<T>& w = var.value();
      const Tensor<T>& g = var.grad();
      T* m = m_.at(p.name).data();
      T* v = v_.at(p.name).data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T gi = g[i] + wd * w[i];
        m[i] = b1 * m[i] + (T(1) - b1) * gi;
        v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
        w[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
      }
    }
  }

  std::int64_t steps() const { return t_; }
  const nn::ParameterList<T>& parameters() const { return params_; }

  /// Moment buffers keyed "<prefix>m/<name>" and "<prefix>v/<name>".
  void export_state(const std::string& prefix, std::map<std::string, Tensor<T>>& out) const {
    for (const auto& [name, t] : m_) out[prefix + "m/" + name] = t;
    for (const auto& [name, t] : v_) out[prefix + "v/" + name] = t;
  }

  void import_state(const std::string& prefix, const std::map<std::string, Tensor<T>>& in, std::int64_t steps) {
    for (auto* table : {&m_, &v_}) {
      const std::string kind = table == &m_ ? "m/" : "v/";
      for (auto& [name, t] : *table) {
        auto it = in.find(prefix + kind + name);
        if (it == in.end()) throw std::runtime_error("Adam: missing state " + prefix + kind + name);
        if (it->second.shape() != t.shape()) throw std::runtime_error("Adam: shape mismatch for " + prefix + kind + name);
        t = it->second;
      }
    }
    t_ = steps;
  }

 private:
  nn::ParameterList<T> params_;
  AdamOptions opt_;
  std::map<std::string, Tensor<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace mrtrans
