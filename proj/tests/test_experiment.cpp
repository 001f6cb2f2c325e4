#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mrtrans/experiment.hpp"
#include "tiny_config.hpp"

using namespace mrtrans;
namespace fs = std::filesystem;

namespace {

MatrixOptions in_memory() {
  MatrixOptions o;
  o.write_files = false;
  return o;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_EQ(median({7.0}), 7.0);
  EXPECT_THROW(median({}), std::invalid_argument);
}

TEST(Matrix, SingleModeGivesOneColumnMatchingStandaloneEvaluation) {
  const auto cfg = testutil::tiny_config("gan+n+r");
  const auto r = run_experiment_matrix(cfg, {cfg.mode}, {cfg.seed}, in_memory());
  ASSERT_EQ(r.cells.size(), 1u);
  ASSERT_TRUE(r.cells[0].ok) << r.cells[0].error;

  // Standalone run of the same configuration.
  const auto data = load_dataset(cfg);
  TrainOptions opt;
  opt.write_files = false;
  const auto alone = Trainer(cfg, data, opt).train();
  const auto eval = evaluate(alone.best, data.test);
  EXPECT_EQ(r.cells[0].eval->g.psnr.mean, eval.g.psnr.mean);
  EXPECT_EQ(r.cells[0].eval->g.ssim.mean, eval.g.ssim.mean);
  EXPECT_EQ(r.cells[0].train.best_val_psnr, alone.best_val_psnr);

  const auto* s = r.find(cfg.mode);
  ASSERT_NE(s, nullptr);
  EXPECT_EQ(s->runs, 1);
  EXPECT_EQ(s->median.psnr, eval.g.psnr.mean);
  EXPECT_EQ(r.find(cfg.mode, "F"), nullptr);

  std::ostringstream grid;
  write_matrix_grid(grid, r);
  const auto rows = lines_of(grid.str());
  ASSERT_EQ(rows.size(), 4u);  // header + three metrics
  EXPECT_NE(rows[0].find("GAN - G"), std::string::npos);
  EXPECT_EQ(rows[0].find("CycleGAN"), std::string::npos);
  EXPECT_NE(rows[1].find("w/ n, r"), std::string::npos);
  EXPECT_NE(rows[1].find(format_metric("psnr", eval.g.psnr.mean)), std::string::npos);
}

TEST(Matrix, MediansOverSeedsAndCycleColumns) {
  const auto cfg = testutil::tiny_config("cycle+f_low");
  const auto r = run_experiment_matrix(cfg, {cfg.mode}, {1, 2, 3}, in_memory());
  ASSERT_EQ(r.cells.size(), 3u);
  std::vector<double> g, f;
  for (const auto& c : r.cells) {
    ASSERT_TRUE(c.ok) << c.error;
    g.push_back(c.eval->g.psnr.mean);
    f.push_back(c.eval->f->ms_ssim.mean);
  }
  std::sort(g.begin(), g.end());
  std::sort(f.begin(), f.end());
  EXPECT_EQ(r.find(cfg.mode, "G")->median.psnr, g[1]);
  EXPECT_EQ(r.find(cfg.mode, "F")->median.ms_ssim, f[1]);

  std::ostringstream grid;
  write_matrix_grid(grid, r);
  const auto header = lines_of(grid.str())[0];
  EXPECT_NE(header.find("CycleGAN f_low G"), std::string::npos);
  EXPECT_NE(header.find("CycleGAN f_low F"), std::string::npos);
}

TEST(Matrix, FailedRunIsRecordedAndOthersContinue) {
  const auto cfg = testutil::tiny_config("gan");
  TrainingMode broken;
  broken.registration = Registration::dual;  // needs the cycle family
  const auto r = run_experiment_matrix(cfg, {broken, cfg.mode}, {1, 2}, in_memory());
  ASSERT_EQ(r.cells.size(), 4u);
  for (const auto& c : r.cells) {
    if (c.mode == broken) {
      EXPECT_FALSE(c.ok);
      EXPECT_NE(c.error.find("dual registration"), std::string::npos);
    } else {
      EXPECT_TRUE(c.ok) << c.error;
    }
  }
  EXPECT_EQ(r.find(broken)->runs, 0);
  EXPECT_EQ(r.find(broken)->failed, 2);
  EXPECT_EQ(r.find(cfg.mode)->runs, 2);

  std::ostringstream tsv, grid;
  write_matrix_tsv(tsv, r);
  write_matrix_grid(grid, r);
  const auto t = lines_of(tsv.str());
  EXPECT_EQ(t.size(), 1u + 4u + 2u);
  EXPECT_NE(tsv.str().find("gan+r2\tG\t1\tfailed"), std::string::npos);
  EXPECT_NE(tsv.str().find("gan\tG\tmedian\tok"), std::string::npos);
  EXPECT_NE(grid.str().find("failed"), std::string::npos);
}

TEST(Matrix, WritesRunDirectories) {
  auto cfg = testutil::tiny_config("gan");
  cfg.schedule.iterations = 2;
  cfg.output_dir = (fs::temp_directory_path() / "mrtrans_matrix_test").string();
  fs::remove_all(cfg.output_dir);
  MatrixOptions opt;
  std::vector<std::string> progress;
  opt.progress = [&](const std::string& m) { progress.push_back(m); };
  run_experiment_matrix(cfg, {cfg.mode}, {4}, opt);
  EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / "gan_s4" / "best.ckpt"));
  EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / "gan_s4" / "log.jsonl"));
  EXPECT_EQ(progress, (std::vector<std::string>{"seed 4 mode gan"}));
  fs::remove_all(cfg.output_dir);
}

TEST(Residual, PanelIsAbsoluteDifference) {
  Image2D a(4, 4, 0.5f), b(4, 4, 0.5f);
  const auto zero = residual_panel(a, b);
  for (float v : zero.vec()) EXPECT_EQ(v, 0.0f);
  b(1, 2) = 0.75f;
  a(3, 0) = 0.1f;
  const auto r = residual_panel(a, b);
  EXPECT_FLOAT_EQ(r(1, 2), 0.25f);
  EXPECT_FLOAT_EQ(r(3, 0), 0.4f);
  EXPECT_EQ(r(0, 0), 0.0f);
  EXPECT_THROW(residual_panel(a, Image2D(4, 5)), std::invalid_argument);
}

TEST(Residual, ColourMaps) {
  EXPECT_EQ(gray(0.0), (Rgb{0, 0, 0}));
  EXPECT_EQ(gray(1.0), (Rgb{255, 255, 255}));
  EXPECT_EQ(heat(0.0, 0.5), (Rgb{0, 0, 0}));
  EXPECT_EQ(heat(0.5, 0.5), (Rgb{255, 255, 255}));
  EXPECT_EQ(heat(10.0, 0.5), (Rgb{255, 255, 255}));
  EXPECT_EQ(heat(0.5 / 3, 0.5), (Rgb{255, 0, 0}));
}

TEST(Figure, LayoutAndContent) {
  const auto cfg = testutil::tiny_config("gan");
  const auto data = load_dataset(cfg);
  ModelSet models(cfg);
  const auto path = (fs::temp_directory_path() / "mrtrans_fig_test.ppm").string();
  std::vector<SlicePair> pairs(data.test.begin(), data.test.begin() + 2);
  emit_residual_figure({FigureModel{"gan", &models.G(), models.all()}}, pairs, path);

  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(w, 4 * 16 + 3 * 2);
  EXPECT_EQ(h, 2 * 16 + 2);
  EXPECT_EQ(maxval, 255);
  std::vector<unsigned char> px(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  ASSERT_TRUE(in);
  auto at = [&](int i, int j) {
    const std::size_t k = (static_cast<std::size_t>(i) * w + j) * 3;
    return Rgb{px[k], px[k + 1], px[k + 2]};
  };
  // Row 1, column 1 holds the target of the second pair.
  const int y0 = 16 + 2, x0 = 16 + 2;
  EXPECT_EQ(at(y0 + 5, x0 + 7), gray(pairs[1].target(5, 7)));
  // Gaps are white.
  EXPECT_EQ(at(16, 3), (Rgb{255, 255, 255}));
  // Residual column matches the model prediction.
  std::vector<const Image2D*> in0{&pairs[0].source};
  const auto pred = predict(models.G(), models.all(), in0)[0];
  EXPECT_EQ(at(3, 3 * 18 + 4), heat(std::abs(pred(3, 4) - pairs[0].target(3, 4)), 0.5));
  fs::remove(path);

  EXPECT_THROW(emit_residual_figure({FigureModel{"gan", &models.G(), models.all()}}, pairs, "/nonexistent/dir/x.ppm"),
               std::runtime_error);
  EXPECT_THROW(emit_residual_figure(std::vector<FigureModel>{}, {}, path), std::invalid_argument);
}
