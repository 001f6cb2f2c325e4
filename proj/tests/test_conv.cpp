#include <gtest/gtest.h>

#include "mrtrans/conv.hpp"
#include "test_util.hpp"

using namespace mrtrans;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {

std::mt19937_64 rng(5);

// Direct definition: out[n,o,i,j] = b[o] + sum w[o,c,u,v] x[n,c,i*s+u-p,j*s+v-p].
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int s, int p) {
  const int k = w.h();
  const int ho = (x.h() + 2 * p - k) / s + 1, wo = (x.w() + 2 * p - k) / s + 1;
  Tensor<double> out({x.n(), w.n(), ho, wo});
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < w.n(); ++o)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double acc = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < x.c(); ++c)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                const int y = i * s + u - p, z = j * s + v - p;
                if (y >= 0 && y < x.h() && z >= 0 && z < x.w()) acc += w.at(o, c, u, v) * x.at(n, c, y, z);
              }
          out.at(n, o, i, j) = acc;
        }
  return out;
}

// Scatter definition: each input pixel adds w * x at (i*s+u-p, j*s+v-p).
Tensor<double> naive_conv_transpose(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int s,
                                    int p, int oh, int ow) {
  const int k = w.h();
  Tensor<double> out({x.n(), w.c(), oh, ow});
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < w.c(); ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) out.at(n, o, i, j) = b[static_cast<std::size_t>(o)];
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j)
          for (int o = 0; o < w.c(); ++o)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                const int y = i * s + u - p, z = j * s + v - p;
                if (y >= 0 && y < oh && z >= 0 && z < ow) out.at(n, o, y, z) += w.at(c, o, u, v) * x.at(n, c, i, j);
              }
  return out;
}

void expect_close(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a[k], b[k], tol) << "at " << k;
}

}  // namespace

struct ConvCase {
  int in_ch, out_ch, k, stride, pad, h, w;
};

class ConvForward : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvForward, MatchesDirectDefinition) {
  const auto c = GetParam();
  const auto x = random_tensor({2, c.in_ch, c.h, c.w}, rng);
  const auto w = random_tensor({c.out_ch, c.in_ch, c.k, c.k}, rng);
  const auto b = random_tensor({1, c.out_ch, 1, 1}, rng);
  const auto y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), {c.stride, c.pad});
  expect_close(y.value(), naive_conv(x, w, b, c.stride, c.pad), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvForward,
                         ::testing::Values(ConvCase{1, 2, 3, 1, 1, 5, 6}, ConvCase{3, 4, 3, 2, 1, 8, 8},
                                           ConvCase{2, 1, 4, 2, 1, 8, 6}, ConvCase{2, 3, 1, 1, 0, 4, 4},
                                           ConvCase{1, 2, 7, 1, 3, 9, 9}, ConvCase{2, 2, 3, 1, 0, 5, 7}));

TEST(Conv, Gradients) {
  for (const auto& c : {ConvCase{2, 3, 3, 1, 1, 5, 5}, ConvCase{2, 2, 3, 2, 1, 6, 6}, ConvCase{1, 2, 4, 2, 1, 6, 6}}) {
    auto f = [&](const std::vector<ad::Var<double>>& v) {
      auto y = ad::conv2d(v[0], v[1], v[2], {c.stride, c.pad});
      return ad::mean_squared_to(y, 0.3);
    };
    const auto r = check_gradients(f, {random_tensor({2, c.in_ch, c.h, c.w}, rng),
                                       random_tensor({c.out_ch, c.in_ch, c.k, c.k}, rng),
                                       random_tensor({1, c.out_ch, 1, 1}, rng)});
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST(ConvTranspose, MatchesScatterDefinition) {
  const auto x = random_tensor({2, 3, 4, 5}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto b = random_tensor({1, 2, 1, 1}, rng);
  const auto y = ad::conv_transpose2d(ad::constant(x), ad::constant(w), ad::constant(b), {2, 1}, {8, 10});
  expect_close(y.value(), naive_conv_transpose(x, w, b, 2, 1, 8, 10), 1e-12);
}

TEST(ConvTranspose, IsAdjointOfConv) {
  // <conv(x), y> == <x, conv_transpose(y)> with zero bias.
  const auto x = random_tensor({1, 2, 8, 8}, rng);
  const auto y = random_tensor({1, 3, 4, 4}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor<double> b3({1, 3, 1, 1}), b2({1, 2, 1, 1});
  const auto cx = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b3), {2, 1}).value();
  const auto ty = ad::conv_transpose2d(ad::constant(y), ad::constant(w), ad::constant(b2), {2, 1}, {8, 8}).value();
  double lhs = 0, rhs = 0;
  for (std::size_t k = 0; k < y.size(); ++k) lhs += cx[k] * y[k];
  for (std::size_t k = 0; k < x.size(); ++k) rhs += x[k] * ty[k];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(ConvTranspose, Gradients) {
  auto f = [](const std::vector<ad::Var<double>>& v) {
    return ad::mean_squared_to(ad::conv_transpose2d(v[0], v[1], v[2], {2, 1}, {6, 6}), 0.1);
  };
  const auto r = check_gradients(
      f, {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng), random_tensor({1, 3, 1, 1}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Conv, RejectsIncompatibleWeight) {
  auto x = ad::constant(Tensor<double>({1, 2, 4, 4}));
  auto w = ad::constant(Tensor<double>({1, 3, 3, 3}));
  auto b = ad::constant(Tensor<double>({1, 1, 1, 1}));
  EXPECT_THROW(ad::conv2d(x, w, b, {1, 1}), std::invalid_argument);
}

TEST(Conv, FloatMatchesDouble) {
  const auto x = random_tensor({2, 3, 9, 9}, rng);
  const auto w = random_tensor({4, 3, 3, 3}, rng);
  const auto b = random_tensor({1, 4, 1, 1}, rng);
  const auto yd = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), {2, 1}).value();
  const auto yf = ad::conv2d(ad::constant(x.cast<float>()), ad::constant(w.cast<float>()),
                             ad::constant(b.cast<float>()), {2, 1})
                      .value();
  for (std::size_t k = 0; k < yd.size(); ++k) EXPECT_NEAR(yf[k], yd[k], 1e-5);
}
