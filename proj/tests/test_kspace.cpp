#include <gtest/gtest.h>

#include <complex>
#include <numbers>
#include <random>

#include "mrtrans/kspace.hpp"

using namespace mrtrans;

namespace {

std::mt19937_64 rng(8);

Image<double> random_image(int h, int w, double lo = 0.0, double hi = 1.0) {
  Image<double> img(h, w);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : img.vec()) v = d(rng);
  return img;
}

// Direct O(H^2 W^2) DFT; output bin (i,j) holds frequency (i - H/2, j - W/2).
Image<double> brute_centered_magnitude(const Image<double>& img) {
  const int h = img.rows(), w = img.cols();
  Image<double> out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int ku = i - h / 2, kv = j - w / 2;
      std::complex<double> acc = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double ang = -2.0 * std::numbers::pi * (static_cast<double>(ku) * y / h + static_cast<double>(kv) * x / w);
          acc += img(y, x) * std::polar(1.0, ang);
        }
      out(i, j) = std::abs(acc);
    }
  return out;
}

double brute_loss(const Image<double>& gen, const Image<double>& tgt, const FrequencyMask& m, double w) {
  const auto sg = brute_centered_magnitude(gen), st = brute_centered_magnitude(tgt);
  double in = 0, out = 0;
  for (std::size_t k = 0; k < sg.size(); ++k) {
    const double d = std::abs(sg[k] - st[k]);
    (m.mask[k] ? in : out) += d;
  }
  const double n = static_cast<double>(sg.size());
  return w * in / n + (1 - w) * out / n;
}

Image<double> circular_shift(const Image<double>& img, int dy, int dx) {
  Image<double> out(img.rows(), img.cols());
  for (int i = 0; i < img.rows(); ++i)
    for (int j = 0; j < img.cols(); ++j)
      out((i + dy) % img.rows(), (j + dx) % img.cols()) = img(i, j);
  return out;
}

}  // namespace

TEST(CenteredDft, ZeroImage) {
  const auto s = centered_dft_magnitude(Image<double>(6, 8));
  for (double v : s.magnitude.vec()) EXPECT_EQ(v, 0.0);
}

TEST(CenteredDft, ConstantImageHasSingleCenterBin) {
  for (auto [h, w] : {std::pair{8, 8}, std::pair{7, 10}, std::pair{16, 5}}) {
    const double c = 0.37;
    const auto s = centered_dft_magnitude(Image<double>(h, w, c));
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double expect = (i == h / 2 && j == w / 2) ? c * h * w : 0.0;
        EXPECT_NEAR(s.magnitude(i, j), expect, 1e-12) << h << "x" << w << " bin " << i << "," << j;
      }
  }
}

TEST(CenteredDft, ImpulseHasFlatSpectrum) {
  for (auto [y, x] : {std::pair{0, 0}, std::pair{3, 5}, std::pair{7, 1}}) {
    Image<double> img(8, 9);
    img(y, x) = 1.0;
    const auto s = centered_dft_magnitude(img);
    for (double v : s.magnitude.vec()) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(CenteredDft, MatchesBruteForceOnRandomImages) {
  for (auto [h, w] : {std::pair{8, 8}, std::pair{9, 6}, std::pair{12, 16}}) {
    const auto img = random_image(h, w);
    const auto fast = centered_dft_magnitude(img).magnitude;
    const auto ref = brute_centered_magnitude(img);
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(fast[k], ref[k], 1e-10);
  }
}

TEST(CenteredDft, PointSymmetricForRealInput) {
  const int n = 8;
  const auto s = centered_dft_magnitude(random_image(n, n)).magnitude;
  for (int i = 1; i < n; ++i)
    for (int j = 1; j < n; ++j) EXPECT_NEAR(s(i, j), s(n - i, n - j), 1e-10);
}

TEST(CenteredDft, RejectsTinyOrNonFinite) {
  EXPECT_THROW(centered_dft_magnitude(Image<double>(1, 5)), std::invalid_argument);
  Image<double> bad(4, 4);
  bad(1, 2) = std::nan("");
  EXPECT_THROW(centered_dft_magnitude(bad), std::invalid_argument);
}

TEST(RadialMask, Examples) {
  EXPECT_EQ(build_radial_mask(8, 8, 0).count(), 1u);
  EXPECT_EQ(build_radial_mask(8, 8, 0).mask(4, 4), 1);
  EXPECT_EQ(build_radial_mask(8, 8, 6).count(), 64u);
  EXPECT_EQ(build_radial_mask(8, 8, 2).count(), 13u);
  EXPECT_THROW(build_radial_mask(8, 8, -1), std::invalid_argument);
  EXPECT_THROW(build_radial_mask(0, 8, 1), std::invalid_argument);
}

TEST(RadialMask, MatchesOffsetEnumeration) {
  for (int h : {5, 8, 11})
    for (int w : {4, 8, 9})
      for (int r : {0, 1, 2, 3, 5}) {
        const auto m = build_radial_mask(h, w, r);
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) {
            const double d = std::hypot(i - h / 2, j - w / 2);
            EXPECT_EQ(m.mask(i, j), d <= r ? 1 : 0);
          }
      }
}

TEST(RadialMask, PartitionAndNesting) {
  for (int h : {4, 7, 16})
    for (int w : {3, 8, 16}) {
      auto prev = build_radial_mask(h, w, 0);
      for (int r = 0; r <= 12; ++r) {
        const auto m = build_radial_mask(h, w, r);
        const auto c = m.complement();
        for (std::size_t k = 0; k < m.mask.size(); ++k) {
          EXPECT_EQ(m.mask[k] + c[k], 1);
          EXPECT_LE(prev.mask[k], m.mask[k]);
        }
        prev = m;
      }
    }
}

TEST(FrequencyWeight, Presets) {
  EXPECT_EQ(FrequencyWeight::preset("f_low").value, 1.0);
  EXPECT_EQ(FrequencyWeight::preset("f_hi").value, 0.0);
  EXPECT_EQ(FrequencyWeight::preset("f_all").value, 0.5);
  EXPECT_THROW(FrequencyWeight::preset("f_mid"), std::invalid_argument);
  EXPECT_THROW(FrequencyWeight::preset(FrequencyPreset::off), std::invalid_argument);
  EXPECT_THROW(FrequencyWeight(1.5), std::invalid_argument);
}

TEST(FrequencyLoss, ZeroForIdenticalImages) {
  const auto a = random_image(12, 12);
  for (double w : {0.0, 0.3, 1.0}) EXPECT_NEAR(frequency_loss(a, a, build_radial_mask(12, 12, 3), FrequencyWeight(w)), 0.0, 1e-15);
}

TEST(FrequencyLoss, LinearInWeight) {
  const auto a = random_image(16, 16), b = random_image(16, 16);
  const auto m = build_radial_mask(16, 16, 4);
  const double l0 = frequency_loss(a, b, m, FrequencyWeight(0.0));
  const double l1 = frequency_loss(a, b, m, FrequencyWeight(1.0));
  for (double w : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double lw = frequency_loss(a, b, m, FrequencyWeight(w));
    EXPECT_NEAR(lw, w * l1 + (1 - w) * l0, 1e-6 * lw);
  }
}

TEST(FrequencyLoss, ConstantTargetGolden) {
  // Only the DC bin differs. The loss's magnitude epsilon (sqrt(1e-12) on
  // zero bins) shifts the result by at most 1e-6 / (H*W).
  const double c = 0.6;
  for (int n : {8, 16}) {
    const double l = frequency_loss(Image<double>(n, n), Image<double>(n, n, c), build_radial_mask(n, n, 0), FrequencyWeight(1.0));
    EXPECT_NEAR(l, c, 1e-6 / (n * n) + 1e-12);
  }
}

TEST(FrequencyLoss, MatchesBruteForce) {
  for (int r : {0, 2, 5}) {
    const auto a = random_image(10, 10), b = random_image(10, 10);
    const auto m = build_radial_mask(10, 10, r);
    for (double w : {0.0, 0.5, 1.0})
      EXPECT_NEAR(frequency_loss(a, b, m, FrequencyWeight(w)), brute_loss(a, b, m, w), 1e-9);
  }
}

TEST(FrequencyLoss, CircularShiftInvariant) {
  const auto img = random_image(8, 8);
  const auto m = build_radial_mask(8, 8, 2);
  for (auto [dy, dx] : {std::pair{1, 0}, std::pair{0, 3}, std::pair{5, 7}})
    EXPECT_NEAR(frequency_loss(circular_shift(img, dy, dx), img, m, FrequencyWeight(0.5)), 0.0, 1e-9);
}

TEST(FrequencyLoss, Nonnegative) {
  for (int t = 0; t < 20; ++t) {
    const auto a = random_image(8, 8), b = random_image(8, 8);
    EXPECT_GE(frequency_loss(a, b, build_radial_mask(8, 8, t % 5), FrequencyWeight((t % 3) / 2.0)), 0.0);
  }
}

TEST(FrequencyLoss, ShapeMismatchRejected) {
  EXPECT_THROW(frequency_loss(Image<double>(8, 8), Image<double>(8, 9), build_radial_mask(8, 8, 1), FrequencyWeight()),
               std::invalid_argument);
  EXPECT_THROW(frequency_loss(Image<double>(8, 8), Image<double>(8, 8), build_radial_mask(9, 8, 1), FrequencyWeight()),
               std::invalid_argument);
}

TEST(FrequencyLoss, GradientMatchesFiniteDifferences) {
  const int n = 16;
  const double h = 1e-4;
  for (int r : {0, 4, 7})
    for (double w : {0.0, 0.5, 1.0}) {
      const auto gen = random_image(n, n), tgt = random_image(n, n);
      const auto m = build_radial_mask(n, n, r);
      const auto g = frequency_loss_gradient(gen, tgt, m, FrequencyWeight(w));
      double num = 0, den = 0;
      for (std::size_t k = 0; k < gen.size(); ++k) {
        auto up = gen, down = gen;
        up[k] += h;
        down[k] -= h;
        const double fd = (frequency_loss(up, tgt, m, FrequencyWeight(w)) - frequency_loss(down, tgt, m, FrequencyWeight(w))) / (2 * h);
        num += (fd - g[k]) * (fd - g[k]);
        den += fd * fd;
      }
      EXPECT_LT(std::sqrt(num / den), 1e-3) << "r=" << r << " w=" << w;
    }
}

TEST(FrequencyLoss, BatchedAutodiffMatchesPerImage) {
  const int n = 12;
  const auto m = build_radial_mask(n, n, 3);
  std::vector<Image<double>> gens, tgts;
  for (int b = 0; b < 3; ++b) {
    gens.push_back(random_image(n, n));
    tgts.push_back(random_image(n, n));
  }
  auto g = ad::parameter(stack_images<double, double>(gens));
  auto t = ad::constant(stack_images<double, double>(tgts));
  auto loss = ad::frequency_loss(g, t, m, FrequencyWeight(0.5));
  double expect = 0;
  for (int b = 0; b < 3; ++b) expect += frequency_loss(gens[b], tgts[b], m, FrequencyWeight(0.5)) / 3;
  EXPECT_NEAR(loss.item(), expect, 1e-12);
  ad::backward(loss);
  for (int b = 0; b < 3; ++b) {
    const auto ref = frequency_loss_gradient(gens[b], tgts[b], m, FrequencyWeight(0.5));
    const auto got = image_from_plane<double>(g.grad(), b);
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(got[k], ref[k] / 3, 1e-12);
  }
}
