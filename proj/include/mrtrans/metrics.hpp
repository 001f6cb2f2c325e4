#pragma once

// PSNR, SSIM and MS-SSIM with the usual constants, and per-split reports.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrtrans/tensor.hpp"

namespace mrtrans {

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

inline constexpr double kPsnrCap = 100.0;
inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// 10 log10(range^2 / MSE), capped at kPsnrCap (also for identical images).
template <typename T>
double psnr(const Image<T>& a, const Image<T>& b, double data_range = 1.0) {
  require_same_shape(a, b, "psnr");
  if (!(data_range > 0)) throw std::invalid_argument("psnr: data_range must be positive");
  if (a.empty()) throw std::invalid_argument("psnr: empty images");
  double se = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

namespace metrics_detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) total += k[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (auto& v : k) v /= total;
  return k;
}

struct Plane {
  int rows = 0, cols = 0;
  std::vector<double> v;
  double operator()(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
};

// Separable correlation keeping only positions where the window fits.
inline Plane filter_valid(const Plane& p, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int r = p.rows - n + 1, c = p.cols - n + 1;
  Plane tmp{p.rows, c, std::vector<double>(static_cast<std::size_t>(p.rows) * c)};
  for (int i = 0; i < p.rows; ++i)
    for (int j = 0; j < c; ++j) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[static_cast<std::size_t>(t)] * p(i, j + t);
      tmp.v[static_cast<std::size_t>(i) * c + j] = s;
    }
  Plane out{r, c, std::vector<double>(static_cast<std::size_t>(r) * c)};
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[static_cast<std::size_t>(t)] * tmp(i + t, j);
      out.v[static_cast<std::size_t>(i) * c + j] = s;
    }
  return out;
}

template <typename T>
Plane to_plane(const Image<T>& img) {
  Plane p{img.rows(), img.cols(), std::vector<double>(img.size())};
  for (std::size_t k = 0; k < img.size(); ++k) p.v[k] = static_cast<double>(img[k]);
  return p;
}

inline Plane product(const Plane& a, const Plane& b) {
  Plane out{a.rows, a.cols, std::vector<double>(a.v.size())};
  for (std::size_t k = 0; k < a.v.size(); ++k) out.v[k] = a.v[k] * b.v[k];
  return out;
}

// 2x2 average pooling; an odd trailing row or column is dropped.
inline Plane downsample(const Plane& p) {
  Plane out{p.rows / 2, p.cols / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.rows) * out.cols);
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j)
      out.v[static_cast<std::size_t>(i) * out.cols + j] =
          0.25 * (p(2 * i, 2 * j) + p(2 * i, 2 * j + 1) + p(2 * i + 1, 2 * j) + p(2 * i + 1, 2 * j + 1));
  return out;
}

struct SsimTerms {
  double ssim;  // mean of luminance * contrast-structure
  double cs;    // mean of contrast-structure alone
};

inline SsimTerms ssim_terms(const Plane& a, const Plane& b, double data_range, const SsimOptions& o) {
  const auto k = gaussian_kernel(o.window, o.sigma);
  const Plane mu_a = filter_valid(a, k), mu_b = filter_valid(b, k);
  const Plane aa = filter_valid(product(a, a), k), bb = filter_valid(product(b, b), k);
  const Plane ab = filter_valid(product(a, b), k);
  const double c1 = (o.k1 * data_range) * (o.k1 * data_range);
  const double c2 = (o.k2 * data_range) * (o.k2 * data_range);
  double s_sum = 0.0, cs_sum = 0.0;
  for (std::size_t i = 0; i < mu_a.v.size(); ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = aa.v[i] - ma * ma, vb = bb.v[i] - mb * mb, cov = ab.v[i] - ma * mb;
    const double cs = (2 * cov + c2) / (va + vb + c2);
    const double lum = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    s_sum += lum * cs;
    cs_sum += cs;
  }
  const auto n = static_cast<double>(mu_a.v.size());
  return {s_sum / n, cs_sum / n};
}

}  // namespace metrics_detail

/// Mean SSIM over window positions fully inside the image (Gaussian window,
/// population covariances).
template <typename T>
double ssim(const Image<T>& a, const Image<T>& b, double data_range = 1.0, const SsimOptions& opt = {}) {
  require_same_shape(a, b, "ssim");
  if (std::min(a.rows(), a.cols()) < opt.window)
    throw std::invalid_argument("ssim: image smaller than the " + std::to_string(opt.window) + "px window");
  return metrics_detail::ssim_terms(metrics_detail::to_plane(a), metrics_detail::to_plane(b), data_range, opt).ssim;
}

/// Largest scale count (<= 5) whose coarsest level still fits the window.
inline int ms_ssim_scales_for(int rows, int cols, int window = 11) {
  int scales = 0;
  int side = std::min(rows, cols);
  while (scales < static_cast<int>(kMsSsimWeights.size()) && side >= window) {
    ++scales;
    side /= 2;
  }
  return scales;
}

/// Multi-scale SSIM. scales = 0 picks ms_ssim_scales_for(); fewer than five
/// scales use the leading weights renormalized to sum to one. Negative
/// per-scale terms are clamped to zero before exponentiation.
template <typename T>
double ms_ssim(const Image<T>& a, const Image<T>& b, double data_range = 1.0, int scales = 0,
               const SsimOptions& opt = {}) {
  require_same_shape(a, b, "ms_ssim");
  const int feasible = ms_ssim_scales_for(a.rows(), a.cols(), opt.window);
  if (scales == 0) scales = feasible;
  if (scales < 1 || scales > feasible || scales > static_cast<int>(kMsSsimWeights.size()))
    throw std::invalid_argument("ms_ssim: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " image supports at most " + std::to_string(feasible) + " scale(s)");
  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[static_cast<std::size_t>(s)];
  auto pa = metrics_detail::to_plane(a), pb = metrics_detail::to_plane(b);
  double result = 1.0;
  for (int s = 0; s < scales; ++s) {
    const auto terms = metrics_detail::ssim_terms(pa, pb, data_range, opt);
    const double w = kMsSsimWeights[static_cast<std::size_t>(s)] / wsum;
    const double term = s + 1 == scales ? terms.ssim : terms.cs;
    result *= std::pow(std::max(term, 0.0), w);
    if (s + 1 < scales) {
      pa = metrics_detail::downsample(pa);
      pb = metrics_detail::downsample(pb);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricRecord {
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct MetricsReport {
  std::string generator = "G";
  std::string fingerprint;
  int ms_ssim_scales = 0;
  std::vector<MetricRecord> records;
  MetricSummary psnr, ssim, ms_ssim;

  std::size_t count() const { return records.size(); }
};

template <typename T>
MetricRecord score_pair(const Image<T>& pred, const Image<T>& truth, double data_range = 1.0) {
  return {psnr(pred, truth, data_range), ssim(pred, truth, data_range), ms_ssim(pred, truth, data_range)};
}

inline MetricSummary summarize(const std::vector<MetricRecord>& records, double MetricRecord::*field) {
  double sum = 0.0;
  for (const auto& r : records) sum += r.*field;
  const double mean = sum / static_cast<double>(records.size());
  double ss = 0.0;
  for (const auto& r : records) ss += (r.*field - mean) * (r.*field - mean);
  return {mean, std::sqrt(ss / static_cast<double>(records.size()))};
}

inline MetricsReport aggregate(std::vector<MetricRecord> records, std::string generator = "G",
                               std::string fingerprint = "", int ms_ssim_scales = 0) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  MetricsReport r;
  r.generator = std::move(generator);
  r.fingerprint = std::move(fingerprint);
  r.ms_ssim_scales = ms_ssim_scales;
  r.records = std::move(records);
  r.psnr = summarize(r.records, &MetricRecord::psnr);
  r.ssim = summarize(r.records, &MetricRecord::ssim);
  r.ms_ssim = summarize(r.records, &MetricRecord::ms_ssim);
  return r;
}

/// Display rounding: PSNR to one decimal, SSIM and MS-SSIM to two.
inline std::string format_metric(const std::string& metric, double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), metric == "psnr" ? "%.1f" : "%.2f", value);
  return buf;
}

/// Tab-separated per-slice records followed by a summary block.
inline void write_report(std::ostream& os, const MetricsReport& r) {
  os << "# generator\t" << r.generator << "\n";
  os << "# fingerprint\t" << r.fingerprint << "\n";
  os << "# ms_ssim_scales\t" << r.ms_ssim_scales << "\n";
  os << "slice\tpsnr\tssim\tms_ssim\n";
  os << std::setprecision(10);
  for (std::size_t i = 0; i < r.records.size(); ++i)
    os << i << "\t" << r.records[i].psnr << "\t" << r.records[i].ssim << "\t" << r.records[i].ms_ssim << "\n";
  os << "# summary\tcount\t" << r.count() << "\n";
  os << "# summary\tpsnr\t" << r.psnr.mean << "\t" << r.psnr.std << "\n";
  os << "# summary\tssim\t" << r.ssim.mean << "\t" << r.ssim.std << "\n";
  os << "# summary\tms_ssim\t" << r.ms_ssim.mean << "\t" << r.ms_ssim.std << "\n";
}

}  // namespace mrtrans
