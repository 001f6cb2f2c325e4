#pragma once

// Mode x seed experiment matrix with median aggregation and table output, and
// the prediction/residual figure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mrtrans/trainer.hpp"

namespace mrtrans {

struct MatrixCell {
  TrainingMode mode;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::optional<EvaluationResult> eval;
  TrainResult train;  // log and checkpoints are dropped to save memory
};

/// Per-mode, per-generator medians over the successful seeds.
struct MatrixSummary {
  TrainingMode mode;
  std::string generator;
  int runs = 0;    // successful seeds
  int failed = 0;  // failed seeds
  MetricRecord median;
};

struct MatrixResult {
  std::vector<MatrixCell> cells;
  std::vector<MatrixSummary> summary;

  const MatrixSummary* find(const TrainingMode& m, const std::string& generator = "G") const {
    for (const auto& s : summary)
      if (s.mode == m && s.generator == generator) return &s;
    return nullptr;
  }
};

struct MatrixOptions {
  bool write_files = true;
  Split eval_split = Split::test;
  std::function<void(const std::string&)> progress;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<MatrixSummary> summarize_matrix(const std::vector<MatrixCell>& cells,
                                                   const std::vector<TrainingMode>& modes) {
  std::vector<MatrixSummary> out;
  for (const auto& m : modes) {
    for (const std::string gen : {"G", "F"}) {
      if (gen == "F" && !m.cycle()) continue;
      MatrixSummary s{m, gen, 0, 0, {}};
      std::vector<double> p, q, r;
      for (const auto& c : cells) {
        if (!(c.mode == m)) continue;
        if (!c.ok) {
          ++s.failed;
          continue;
        }
        const MetricsReport& rep = gen == "G" ? c.eval->g : *c.eval->f;
        p.push_back(rep.psnr.mean);
        q.push_back(rep.ssim.mean);
        r.push_back(rep.ms_ssim.mean);
      }
      s.runs = static_cast<int>(p.size());
      if (s.runs > 0) s.median = {median(p), median(q), median(r)};
      out.push_back(s);
    }
  }
  return out;
}

/// Trains and evaluates every mode for every seed. Modes share the dataset of
/// a given seed. A failing run is recorded and the matrix continues.
inline MatrixResult run_experiment_matrix(const ExperimentConfig& base, const std::vector<TrainingMode>& modes,
                                          const std::vector<std::uint64_t>& seeds, const MatrixOptions& opt = {}) {
  namespace fs = std::filesystem;
  MatrixResult result;
  for (const auto seed : seeds) {
    ExperimentConfig seeded = base;
    seeded.seed = seed;
    std::optional<PairDataset> data;
    std::string data_error;
    try {
      data = load_dataset(seeded);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    for (const auto& mode : modes) {
      MatrixCell cell;
      cell.mode = mode;
      cell.seed = seed;
      if (opt.progress) opt.progress("seed " + std::to_string(seed) + " mode " + mode.str());
      try {
        if (!data) throw std::runtime_error("dataset: " + data_error);
        ExperimentConfig c = seeded;
        c.mode = mode;
        c.output_dir = (fs::path(base.output_dir) / (mode.str() + "_s" + std::to_string(seed))).string();
        Trainer trainer(c, *data, TrainOptions{opt.write_files, false, {}});
        cell.train = trainer.train();
        cell.eval = evaluate(cell.train.best, data->split(opt.eval_split));
        cell.train.log.clear();
        cell.train.best = {};
        cell.train.last = {};
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      result.cells.push_back(std::move(cell));
    }
  }
  result.summary = summarize_matrix(result.cells, modes);
  return result;
}

/// Long-form table: one line per run and generator, then one per median.
inline void write_matrix_tsv(std::ostream& os, const MatrixResult& r) {
  os << "mode\tgenerator\tseed\tstatus\tpsnr\tssim\tms_ssim\n";
  char buf[128];
  for (const auto& c : r.cells) {
    for (const std::string gen : {"G", "F"}) {
      if (gen == "F" && !c.mode.cycle()) continue;
      os << c.mode.str() << "\t" << gen << "\t" << c.seed << "\t";
      if (!c.ok) {
        os << "failed\t\t\t\n";
        continue;
      }
      const MetricsReport& rep = gen == "G" ? c.eval->g : *c.eval->f;
      std::snprintf(buf, sizeof(buf), "ok\t%.6f\t%.6f\t%.6f\n", rep.psnr.mean, rep.ssim.mean, rep.ms_ssim.mean);
      os << buf;
    }
  }
  for (const auto& s : r.summary) {
    os << s.mode.str() << "\t" << s.generator << "\tmedian\t";
    if (s.runs == 0) {
      os << "failed\t\t\t\n";
      continue;
    }
    std::snprintf(buf, sizeof(buf), "%s\t%.6f\t%.6f\t%.6f\n", s.failed ? "partial" : "ok", s.median.psnr,
                  s.median.ssim, s.median.ms_ssim);
    os << buf;
  }
}

namespace matrix_detail {

inline std::string variant_label(const TrainingMode& m) {
  std::string s = m.noise ? "w/ n" : "w/o n";
  if (m.registration == Registration::single) s += ", r";
  if (m.registration == Registration::dual) s += ", r2";
  return s;
}

inline std::string column_label(const TrainingMode& m, const std::string& gen) {
  return std::string(m.cycle() ? "CycleGAN" : "GAN") + " " + (m.uses_frequency() ? to_string(m.frequency) : "-") +
         " " + gen;
}

}  // namespace matrix_detail

/// Aligned grid: rows are metric x noise/registration variant, columns are
/// family x frequency preset x generator. Only columns with runs appear.
inline void write_matrix_grid(std::ostream& os, const MatrixResult& r) {
  using namespace matrix_detail;
  std::vector<std::string> columns, variants;
  auto add_unique = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& s : r.summary) {
    add_unique(columns, column_label(s.mode, s.generator));
    add_unique(variants, variant_label(s.mode));
  }
  auto cell_text = [&](const std::string& metric, const std::string& variant, const std::string& column) {
    for (const auto& s : r.summary) {
      if (variant_label(s.mode) != variant || column_label(s.mode, s.generator) != column) continue;
      if (s.runs == 0) return std::string("failed");
      const double v = metric == "psnr" ? s.median.psnr : metric == "ssim" ? s.median.ssim : s.median.ms_ssim;
      return format_metric(metric, v) + (s.failed ? "*" : "");
    }
    return std::string("");
  };
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"metric", "variant"});
  for (const auto& c : columns) rows.back().push_back(c);
  for (const std::string metric : {"psnr", "ssim", "ms_ssim"})
    for (const auto& v : variants) {
      rows.push_back({metric, v});
      for (const auto& c : columns) rows.back().push_back(cell_text(metric, v, c));
    }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      os << row[j] << std::string(width[j] - row[j].size(), ' ');
      if (j + 1 < row.size()) os << "  ";
    }
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Residual figure

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// |pred - truth| per pixel, before any colour mapping.
inline Image2D residual_panel(const Image2D& pred, const Image2D& truth) {
  require_same_shape(pred, truth, "residual_panel");
  Image2D out(pred.rows(), pred.cols());
  for (std::size_t k = 0; k < pred.size(); ++k) out[k] = std::abs(pred[k] - truth[k]);
  return out;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline Rgb gray(double v) {
  const auto b = to_byte(v);
  return {b, b, b};
}

/// Black-red-yellow-white ramp over [0, scale]; values above saturate.
inline Rgb heat(double v, double scale) {
  const double t = std::clamp(v / scale, 0.0, 1.0) * 3.0;
  return {to_byte(t), to_byte(t - 1.0), to_byte(t - 2.0)};
}

struct FigureOptions {
  double residual_scale = 0.5;  // fixed colour scale shared by all panels
  int gap = 2;
};

struct FigureModel {
  std::string name;
  nn::ImageNetwork<float>* generator;
  nn::ParameterList<float> parameters;
};

/// Rows are sample pairs; columns are x, y, then prediction and residual for
/// each model. Written as binary PPM.
inline void emit_residual_figure(const std::vector<FigureModel>& models, const std::vector<SlicePair>& pairs,
                                 const std::string& path, const FigureOptions& opt = {}) {
  if (pairs.empty()) throw std::invalid_argument("emit_residual_figure: no sample pairs");
  const int h = pairs[0].source.rows(), w = pairs[0].source.cols();
  const int ncol = 2 + 2 * static_cast<int>(models.size());
  const int width = ncol * w + (ncol - 1) * opt.gap;
  const int height = static_cast<int>(pairs.size()) * h + (static_cast<int>(pairs.size()) - 1) * opt.gap;
  std::vector<Rgb> canvas(static_cast<std::size_t>(width) * height, Rgb{255, 255, 255});
  auto blit = [&](int row, int col, const Image2D& img, const std::function<Rgb(double)>& cmap) {
    if (img.rows() != h || img.cols() != w) throw std::invalid_argument("emit_residual_figure: mixed image sizes");
    const int y0 = row * (h + opt.gap), x0 = col * (w + opt.gap);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) canvas[static_cast<std::size_t>(y0 + i) * width + x0 + j] = cmap(img(i, j));
  };
  std::vector<const Image2D*> inputs;
  for (const auto& p : pairs) inputs.push_back(&p.source);
  std::vector<std::vector<Image2D>> preds;
  for (const auto& m : models) preds.push_back(predict(*m.generator, m.parameters, inputs));

  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const int row = static_cast<int>(r);
    blit(row, 0, pairs[r].source, gray);
    blit(row, 1, pairs[r].target, gray);
    for (std::size_t m = 0; m < models.size(); ++m) {
      const int col = 2 + 2 * static_cast<int>(m);
      blit(row, col, preds[m][r], gray);
      blit(row, col + 1, residual_panel(preds[m][r], pairs[r].target),
           [&](double v) { return heat(v, opt.residual_scale); });
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write figure " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  for (const auto& px : canvas) out.put(static_cast<char>(px.r)).put(static_cast<char>(px.g)).put(static_cast<char>(px.b));
  if (!out) throw std::runtime_error("write error in " + path);
}

/// Figure for trained checkpoints; each is labelled by its mode.
inline void emit_residual_figure(const std::vector<Checkpoint>& checkpoints, const std::vector<SlicePair>& pairs,
                                 const std::string& path, const FigureOptions& opt = {}) {
  std::vector<std::unique_ptr<ModelSet>> owned;
  std::vector<FigureModel> models;
  for (const auto& ck : checkpoints) {
    auto [cfg, set] = models_from_checkpoint(ck);
    models.push_back({cfg.mode.str(), &set->G(), set->all()});
    owned.push_back(std::move(set));
  }
  emit_residual_figure(models, pairs, path, opt);
}

}  // namespace mrtrans
