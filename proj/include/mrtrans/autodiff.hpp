#pragma once

// Minimal reverse-mode automatic differentiation over NCHW tensors.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mrtrans/reduce.hpp"
#include "mrtrans/tensor.hpp"

namespace mrtrans::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  Tensor<T>& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Shared handle to a graph node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const { return node_->value[0]; }
  Node<T>* get() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad() {
    if (node_->grad.shape() == node_->value.shape()) node_->grad.fill(T(0));
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->ensure_grad();
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> scalar(T v) {
  return constant(Tensor<T>({1, 1, 1, 1}, v));
}

/// Copy of the value with no connection to the graph.
template <typename T>
Var<T> detach(const Var<T>& v) {
  return constant(v.value());
}

namespace detail {

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (auto& in : inputs) {
    if (in.requires_grad()) n->requires_grad = true;
    n->parents.push_back(in.node());
  }
  if (n->requires_grad) n->backward = std::move(backward);
  else n->parents.clear();
  return Var<T>(std::move(n));
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
}

}  // namespace detail

/// Back-propagates from a scalar root. Parameter grads accumulate.
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) throw std::invalid_argument("backward: root must be a scalar");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, bool>> stack{{root.get(), false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!seen.insert(node).second) continue;
    stack.push_back({node, true});
    for (auto& p : node->parents)
      if (p->requires_grad && !seen.count(p.get())) stack.push_back({p.get(), false});
  }

  // Intermediate grads start from zero; leaves keep their accumulated grads.
  for (Node<T>* n : order)
    if (n->backward) {
      n->ensure_grad();
      n->grad.fill(T(0));
    }
  root.get()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops

namespace detail {

// Elementwise map y = f(x) whose derivative is df(x, y).
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  const std::size_t count = out.size();
  {
    const T* __restrict x = a.value().data();
    T* __restrict y = out.data();
    for (std::size_t i = 0; i < count; ++i) y[i] = f(x[i]);
  }
  return make_result<T>(std::move(out), {a}, [f, df, count](Node<T>& self) {
    const T* __restrict x = self.parents[0]->value.data();
    const T* __restrict y = self.value.data();
    const T* __restrict gy = self.grad.data();
    T* __restrict gx = self.parents[0]->ensure_grad().data();
    for (std::size_t i = 0; i < count; ++i) gx[i] += df(x[i], y[i]) * gy[i];
  });
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src, T factor) {
  T* __restrict d = dst.data();
  const T* __restrict s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += factor * s[i];
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "add");
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  {
    const T* __restrict x = a.value().data();
    const T* __restrict y = b.value().data();
    T* __restrict o = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = x[i] + y[i];
  }
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) detail::accumulate(p->ensure_grad(), self.grad, T(1));
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "sub");
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  {
    const T* __restrict x = a.value().data();
    const T* __restrict y = b.value().data();
    T* __restrict o = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = x[i] - y[i];
  }
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) detail::accumulate(self.parents[0]->ensure_grad(), self.grad, T(1));
    if (self.parents[1]->requires_grad) detail::accumulate(self.parents[1]->ensure_grad(), self.grad, T(-1));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return detail::unary(a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

/// factor * a + offset, elementwise.
template <typename T>
Var<T> affine(const Var<T>& a, T factor, T offset) {
  return detail::unary(a, [factor, offset](T x) { return factor * x + offset; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
  return detail::unary(
      a, [slope](T x) { return x > T(0) ? x : slope * x; }, [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

/// Sum of scalar terms, each multiplied by its weight.
template <typename T>
Var<T> weighted_sum(const std::vector<std::pair<Var<T>, T>>& terms) {
  double total = 0.0;
  std::vector<Var<T>> inputs;
  std::vector<T> weights;
  for (const auto& [v, wgt] : terms) {
    if (v.value().size() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
    total += static_cast<double>(wgt) * static_cast<double>(v.item());
    inputs.push_back(v);
    weights.push_back(wgt);
  }
  return detail::make_result<T>(Tensor<T>({1, 1, 1, 1}, static_cast<T>(total)), inputs, [weights](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k)
      if (self.parents[k]->requires_grad) self.parents[k]->ensure_grad()[0] += weights[k] * self.grad[0];
  });
}

/// mean(|a - b|) over all elements.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "mean_abs_diff");
  const std::size_t count = a.value().size();
  const T acc = sum_abs_diff(a.value().data(), b.value().data(), count);
  const bool a_grad = a.requires_grad();
  return detail::make_result<T>(
      Tensor<T>({1, 1, 1, 1}, acc / T(count)), {a, b}, [count, a_grad](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        const T g0 = self.grad[0] / T(count);
        Tensor<T>* ga = a_grad ? &self.parents[0]->ensure_grad() : nullptr;
        Tensor<T>* gb = self.parents[1]->requires_grad ? &self.parents[1]->ensure_grad() : nullptr;
        auto sign = [&](std::size_t i) {
          const T d = av[i] - bv[i];
          return d > T(0) ? g0 : (d < T(0) ? -g0 : T(0));
        };
        if (ga)
          for (std::size_t i = 0; i < count; ++i) (*ga)[i] += sign(i);
        if (gb)
          for (std::size_t i = 0; i < count; ++i) (*gb)[i] -= sign(i);
      });
}

/// mean((a - target)^2) for a constant target.
template <typename T>
Var<T> mean_squared_to(const Var<T>& a, T target) {
  const std::size_t count = a.value().size();
  const T acc = sum_squared_deviation(a.value().data(), count, target);
  return detail::make_result<T>(Tensor<T>({1, 1, 1, 1}, acc / T(count)), {a}, [count, target](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& x = self.parents[0]->value;
    const T g0 = T(2) * self.grad[0] / T(count);
    for (std::size_t i = 0; i < count; ++i) g[i] += g0 * (x[i] - target);
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw std::invalid_argument("concat_channels: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  const int ca = sa[1], cb = sb[1];
  Tensor<T> out = Tensor<T>::uninitialized({sa[0], ca + cb, sa[2], sa[3]});
  const std::size_t plane = static_cast<std::size_t>(sa[2]) * sa[3];
  for (int n = 0; n < sa[0]; ++n) {
    std::copy_n(a.value().data() + a.value().offset(n, 0, 0, 0), ca * plane, out.data() + out.offset(n, 0, 0, 0));
    std::copy_n(b.value().data() + b.value().offset(n, 0, 0, 0), cb * plane, out.data() + out.offset(n, ca, 0, 0));
  }
  return detail::make_result<T>(std::move(out), {a, b}, [ca, cb, plane](Node<T>& self) {
    const int batch = self.value.n();
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      const int ch = k == 0 ? ca : cb;
      const int c0 = k == 0 ? 0 : ca;
      for (int n = 0; n < batch; ++n) {
        const T* src = self.grad.data() + self.grad.offset(n, c0, 0, 0);
        T* dst = g.data() + g.offset(n, 0, 0, 0);
        for (std::size_t i = 0; i < ch * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> upsample2x(const Var<T>& a) {
  const auto& s = a.shape();
  Tensor<T> out = Tensor<T>::uninitialized({s[0], s[1], s[2] * 2, s[3] * 2});
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c)
      for (int i = 0; i < 2 * s[2]; ++i)
        for (int j = 0; j < 2 * s[3]; ++j) out.at(n, c, i, j) = a.value().at(n, c, i / 2, j / 2);
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& s = g.shape();
    for (int n = 0; n < s[0]; ++n)
      for (int c = 0; c < s[1]; ++c)
        for (int i = 0; i < 2 * s[2]; ++i)
          for (int j = 0; j < 2 * s[3]; ++j) g.at(n, c, i / 2, j / 2) += self.grad.at(n, c, i, j);
  });
}

/// Per-sample, per-channel normalization without affine parameters.
template <typename T>
Var<T> instance_norm(const Var<T>& a, T eps = T(1e-5)) {
  const auto& s = a.shape();
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  Tensor<T> out = Tensor<T>::uninitialized(s);
  std::vector<T> inv_std(static_cast<std::size_t>(s[0]) * s[1]);
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      auto x = a.value().plane(n, c);
      auto y = out.plane(n, c);
      const T mean = sum(x.data(), plane) / T(plane);
      const T var = sum_squared_deviation(x.data(), plane, mean) / T(plane);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(n) * s[1] + c] = is;
      for (std::size_t i = 0; i < plane; ++i) y[i] = (x[i] - mean) * is;
    }
  return detail::make_result<T>(std::move(out), {a}, [inv_std = std::move(inv_std), plane](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& s = self.value.shape();
    for (int n = 0; n < s[0]; ++n)
      for (int c = 0; c < s[1]; ++c) {
        auto y = self.value.plane(n, c);
        auto dy = self.grad.plane(n, c);
        auto dx = g.plane(n, c);
        const T sum_dy = sum(dy.data(), plane);
        const T sum_dy_y = dot(dy.data(), y.data(), plane);
        const T is = inv_std[static_cast<std::size_t>(n) * s[1] + c];
        const T m = T(plane);
        for (std::size_t i = 0; i < plane; ++i) dx[i] += is * (dy[i] - sum_dy / m - y[i] * sum_dy_y / m);
      }
  });
}

}  // namespace mrtrans::ad
