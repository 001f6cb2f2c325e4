#include <gtest/gtest.h>

#include <random>

#include "mrtrans/data.hpp"
#include "mrtrans/optim.hpp"
#include "mrtrans/registration.hpp"
#include "test_util.hpp"

using namespace mrtrans;

namespace {

std::mt19937_64 rng(31);

Image<double> random_image(int h, int w) {
  Image<double> img(h, w);
  std::uniform_real_distribution<double> d(0, 1);
  for (auto& v : img.vec()) v = d(rng);
  return img;
}

// Reference: integer shift with clamped source index.
Image<double> index_shift(const Image<double>& img, int dy, int dx) {
  Image<double> out(img.rows(), img.cols());
  for (int i = 0; i < img.rows(); ++i)
    for (int j = 0; j < img.cols(); ++j)
      out(i, j) = img(std::clamp(i + dy, 0, img.rows() - 1), std::clamp(j + dx, 0, img.cols() - 1));
  return out;
}

// Forward differences of both components, each direction averaged over its
// valid positions, then the two directions averaged.
double brute_smoothness(const DisplacementField<double>& f) {
  const int h = f.rows(), w = f.cols();
  double v = 0, hz = 0;
  for (const auto* c : {&f.dy, &f.dx}) {
    for (int i = 0; i + 1 < h; ++i)
      for (int j = 0; j < w; ++j) v += std::pow((*c)(i + 1, j) - (*c)(i, j), 2);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j + 1 < w; ++j) hz += std::pow((*c)(i, j + 1) - (*c)(i, j), 2);
  }
  return 0.5 * (v / (2.0 * (h - 1) * w) + hz / (2.0 * h * (w - 1)));
}

}  // namespace

TEST(Resample, ZeroFieldIsBitExactIdentity) {
  const auto img = random_image(13, 9);
  EXPECT_EQ(resample(img, DisplacementField<double>(13, 9)), img);
  const auto imgf = img.cast<float>();
  EXPECT_EQ(resample(imgf, DisplacementField<float>(13, 9)), imgf);
}

TEST(Resample, IntegerShiftsMatchIndexOracle) {
  const auto img = random_image(8, 10);
  for (auto [dy, dx] : {std::pair{0, 1}, std::pair{1, 0}, std::pair{-2, 3}, std::pair{4, -5}, std::pair{0, 12}}) {
    const auto out = resample(img, DisplacementField<double>::constant(8, 10, dy, dx));
    EXPECT_EQ(out, index_shift(img, dy, dx)) << dy << "," << dx;
  }
}

TEST(Resample, UnitColumnShiftReplicatesLastColumn) {
  const auto img = random_image(5, 6);
  const auto out = resample(img, DisplacementField<double>::constant(5, 6, 0, 1));
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j + 1 < 6; ++j) EXPECT_EQ(out(i, j), img(i, j + 1));
    EXPECT_EQ(out(i, 5), img(i, 5));
  }
}

TEST(Resample, HalfPixelAveragesNeighbours) {
  const auto img = random_image(6, 7);
  const auto out = resample(img, DisplacementField<double>::constant(6, 7, 0, 0.5));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j + 1 < 7; ++j) EXPECT_NEAR(out(i, j), 0.5 * (img(i, j) + img(i, j + 1)), 1e-15);
}

TEST(Resample, RejectsBadInputs) {
  EXPECT_THROW(resample(Image<double>(4, 4), DisplacementField<double>(4, 5)), std::invalid_argument);
  auto f = DisplacementField<double>(4, 4);
  f.dx(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(resample(Image<double>(4, 4), f), std::invalid_argument);
}

TEST(Smoothness, ConstantFieldsAreZero) {
  EXPECT_EQ(smoothness_loss(DisplacementField<double>(6, 6)), 0.0);
  EXPECT_EQ(smoothness_loss(DisplacementField<double>::constant(6, 5, 2.5, -1.25)), 0.0);
}

TEST(Smoothness, UnitRampGolden) {
  DisplacementField<double> f(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) f.dx(i, j) = j;
  // 12 unit horizontal differences over 2*4*3 = 24 horizontal slots, no vertical change.
  EXPECT_DOUBLE_EQ(brute_smoothness(f), 0.25);
  EXPECT_DOUBLE_EQ(smoothness_loss(f), 0.25);
}

TEST(Smoothness, MatchesBruteForceAndShiftInvariant) {
  DisplacementField<double> f(random_image(7, 5), random_image(7, 5));
  EXPECT_NEAR(smoothness_loss(f), brute_smoothness(f), 1e-14);
  auto g = f;
  for (auto& v : g.dy.vec()) v += 3.0;
  for (auto& v : g.dx.vec()) v -= 1.5;
  EXPECT_NEAR(smoothness_loss(g), smoothness_loss(f), 1e-12);
}

TEST(Smoothness, BatchedAutodiffMatchesAndGradients) {
  auto f = [](const std::vector<ad::Var<double>>& v) { return ad::smoothness(v[0]); };
  const auto r = testutil::check_gradients(f, {testutil::random_tensor({2, 2, 5, 6}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-6);
  const Tensor<double> t = testutil::random_tensor({1, 2, 5, 6}, rng);
  DisplacementField<double> df(image_from_plane<double>(t, 0, 0), image_from_plane<double>(t, 0, 1));
  EXPECT_NEAR(ad::smoothness(ad::constant(t)).item(), smoothness_loss(df), 1e-14);
}

TEST(CorrectionLoss, Examples) {
  const auto y = random_image(6, 8);
  EXPECT_EQ(correction_loss(y, y, DisplacementField<double>(6, 8)), 0.0);
  auto offset = y;
  for (auto& v : offset.vec()) v += 0.1;
  EXPECT_NEAR(correction_loss(offset, y, DisplacementField<double>(6, 8)), 0.1, 1e-12);
  EXPECT_THROW(correction_loss(y, Image<double>(6, 7), DisplacementField<double>(6, 8)), std::invalid_argument);
}

TEST(CorrectionLoss, ShiftCancelsExceptBorderColumn) {
  const auto y = random_image(6, 8);
  // gen(i,j) = y(i,j-1): content moved one column right; field (0,+1) pulls it back.
  const auto gen = index_shift(y, 0, -1);
  const auto warped = resample(gen, DisplacementField<double>::constant(6, 8, 0, 1));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j + 1 < 8; ++j) EXPECT_EQ(warped(i, j), y(i, j));
  double edge = 0;
  for (int i = 0; i < 6; ++i) edge += std::abs(gen(i, 7) - y(i, 7));
  EXPECT_NEAR(correction_loss(gen, y, DisplacementField<double>::constant(6, 8, 0, 1)), edge / 48, 1e-15);
}

TEST(CorrectionLoss, DecompositionIdentity) {
  for (int t = 0; t < 5; ++t) {
    const auto gen = random_image(9, 9), y = random_image(9, 9);
    DisplacementField<double> f(random_image(9, 9), random_image(9, 9));
    EXPECT_EQ(correction_loss(gen, y, f), mean_absolute_error(resample(gen, f), y));
  }
}

TEST(CorrectionLoss, GradientsMatchFiniteDifferences) {
  const int n = 16;
  // Field values keep sample points at least 0.05 px from cell boundaries and inside the grid.
  Tensor<double> field({1, 2, n, n});
  std::uniform_real_distribution<double> frac(0.05, 0.95);
  std::uniform_int_distribution<int> whole(-2, 1);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const int pos = c == 0 ? i : j;
        int k = whole(rng);
        if (pos + k < 0) k = -pos;
        if (pos + k + 1 > n - 1) k = n - 2 - pos;
        field.at(0, c, i, j) = k + frac(rng);
      }
  auto f = [](const std::vector<ad::Var<double>>& v) { return ad::mean_abs_diff(ad::resample(v[0], v[1]), v[2]); };
  const auto r = testutil::check_gradients(
      f, {testutil::random_tensor({1, 1, n, n}, rng, 0, 1), field, testutil::random_tensor({1, 1, n, n}, rng, 0, 1)},
      1e-7);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(EstimateDvf, ZeroAtInitAndShape) {
  RegistrationUNet<float> net(RegistrationNetworkSpec{}, rng);
  const auto moving = random_image(64, 64).cast<float>(), fixed = random_image(64, 64).cast<float>();
  const auto f = estimate_dvf(moving, fixed, net);
  EXPECT_EQ(f.rows(), 64);
  EXPECT_EQ(f.cols(), 64);
  for (float v : f.dy.vec()) EXPECT_EQ(v, 0.0f);
  for (float v : f.dx.vec()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(estimate_dvf(moving, Image2D(64, 32), net), std::invalid_argument);
}

TEST(EstimateDvf, OverfitsThreePixelShift) {
  std::mt19937_64 data_rng(4);
  const Image2D fixed = make_synthetic_pair(data_rng, 64).target;
  Image2D moving(64, 64);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) moving(i, j) = fixed(i, std::max(j - 3, 0));

  RegistrationUNet<float> net(RegistrationNetworkSpec{}, rng);
  Adam<float> opt(net.parameters(), AdamOptions{1e-3, 0.9, 0.999, 1e-8, 0.0});
  const auto m = ad::constant(stack_images<float, float>(std::span<const Image2D>(&moving, 1)));
  const auto y = ad::constant(stack_images<float, float>(std::span<const Image2D>(&fixed, 1)));
  const double before = mean_absolute_error(moving, fixed);
  for (int step = 0; step < 500; ++step) {
    opt.zero_grad();
    auto loss = ad::mean_abs_diff(ad::resample(m, net.forward(m, y)), y);
    ad::backward(loss);
    opt.step();
  }
  const double after = mean_absolute_error(resample(moving, estimate_dvf(moving, fixed, net)), fixed);
  EXPECT_LT(after, 0.02) << "before " << before;
}
