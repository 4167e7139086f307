#include "svnerf/metrics.hpp"

#include <cmath>
#include <map>

#include <fmt/format.h>

namespace svnerf {

namespace {

EvalWindow resolve(const Image& a, const Image& b, EvalWindow w) {
  if (!a.same_shape(b))
    throw DomainError(fmt::format("image shapes differ: {}x{}x{} vs {}x{}x{}", a.height, a.width, a.channels,
                                  b.height, b.width, b.channels));
  if (w.width <= 0 || w.height <= 0) return {a.width, a.height};
  if (w.width > a.width || w.height > a.height) throw DomainError("evaluation window exceeds the image");
  return w;
}

}  // namespace

double mse(const Image& pred, const Image& gt, EvalWindow window) {
  const EvalWindow w = resolve(pred, gt, window);
  double acc = 0;
  for (int y = 0; y < w.height; ++y)
    for (int x = 0; x < w.width; ++x)
      for (int c = 0; c < pred.channels; ++c) {
        const double d = double(pred(y, x, c)) - double(gt(y, x, c));
        acc += d * d;
      }
  return acc / (double(w.width) * w.height * pred.channels);
}

double psnr_from_mse(double m) { return m < 1e-10 ? 99.0 : -10.0 * std::log10(m); }

double psnr(const Image& pred, const Image& gt, EvalWindow window) { return psnr_from_mse(mse(pred, gt, window)); }

Mat<double> luma(const Image& img, EvalWindow window) {
  const EvalWindow w = resolve(img, img, window);
  Mat<double> out(w.height, w.width);
  for (int y = 0; y < w.height; ++y)
    for (int x = 0; x < w.width; ++x)
      out(y, x) = img.channels >= 3 ? 0.299 * img(y, x, 0) + 0.587 * img(y, x, 1) + 0.114 * img(y, x, 2)
                                    : double(img(y, x, 0));
  return out;
}

double ssim(const Image& pred, const Image& gt, EvalWindow window) {
  const EvalWindow w = resolve(pred, gt, window);
  constexpr int K = 11;
  if (w.width < K || w.height < K) throw DomainError("SSIM needs images of at least 11x11");
  const Mat<double> a = luma(pred, w), b = luma(gt, w);
  double g[K], gsum = 0;
  for (int i = 0; i < K; ++i) {
    const double d = i - K / 2;
    g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;
  // Separable filtering of a, b, a^2, b^2, ab over valid windows.
  auto filter = [&](const Mat<double>& m) {
    const int H = int(m.rows()), W = int(m.cols());
    Mat<double> tmp(H, W - K + 1), out(H - K + 1, W - K + 1);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x + K <= W; ++x) {
        double s = 0;
        for (int i = 0; i < K; ++i) s += g[i] * m(y, x + i);
        tmp(y, x) = s;
      }
    for (int y = 0; y + K <= H; ++y)
      for (int x = 0; x < int(tmp.cols()); ++x) {
        double s = 0;
        for (int i = 0; i < K; ++i) s += g[i] * tmp(y + i, x);
        out(y, x) = s;
      }
    return out;
  };
  const Mat<double> mu_a = filter(a), mu_b = filter(b);
  const Mat<double> saa = filter(a.cwiseProduct(a)), sbb = filter(b.cwiseProduct(b)), sab = filter(a.cwiseProduct(b));
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double total = 0;
  for (Eigen::Index y = 0; y < mu_a.rows(); ++y)
    for (Eigen::Index x = 0; x < mu_a.cols(); ++x) {
      const double ma = mu_a(y, x), mb = mu_b(y, x);
      const double va = saa(y, x) - ma * ma, vb = sbb(y, x) - mb * mb, cov = sab(y, x) - ma * mb;
      total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
  return total / double(mu_a.size());
}

DepthMetrics depth_metrics(const Image& pred, const Image& gt, const std::vector<unsigned char>& mask,
                           const std::vector<double>& thresholds, double scale) {
  if (!pred.same_shape(gt)) throw DomainError("depth maps differ in shape");
  const std::size_t n = std::size_t(pred.height) * pred.width;
  if (mask.size() != n) throw DomainError("depth mask size does not match the depth maps");
  if (!(scale > 0)) throw DomainError("depth normalization scale must be positive");
  DepthMetrics m;
  m.thresholds = thresholds;
  m.accuracy.assign(thresholds.size(), 0.0);
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double e = std::abs(double(pred.data[i * pred.channels]) - double(gt.data[i * gt.channels])) / scale;
    sum += e;
    for (std::size_t k = 0; k < thresholds.size(); ++k)
      if (e < thresholds[k]) m.accuracy[k] += 1;
    ++m.count;
  }
  if (m.count == 0) throw DomainError("depth mask selects no pixels");
  m.abs_err = sum / double(m.count);
  for (double& a : m.accuracy) a /= double(m.count);
  return m;
}

std::string format_report_table(const Report& report) {
  std::string s = fmt::format("# split: {}\n# depth normalization: {}\n", report.split, report.depth_normalization);
  s += "scene\ttarget\tpsnr\tssim\tlpips\tabs_err\tacc_0.01\tacc_0.05\n";
  for (const auto& r : report.rows) {
    if (r.has_depth) {
      s += fmt::format("{}\t{}\t{:.4f}\t{:.4f}\tn/a\t{:.5f}\t{:.4f}\t{:.4f}\n", r.scene, r.target, r.psnr, r.ssim,
                       r.abs_err, r.acc_01, r.acc_05);
    } else {
      s += fmt::format("{}\t{}\t{:.4f}\t{:.4f}\tn/a\tn/a\tn/a\tn/a\n", r.scene, r.target, r.psnr, r.ssim);
    }
  }
  return s;
}

std::string format_report_summary(const Report& report) {
  struct Acc {
    double psnr = 0, ssim = 0, abs_err = 0, acc_01 = 0, acc_05 = 0;
    int n = 0, nd = 0;
    void add(const ReportRow& r) {
      psnr += r.psnr;
      ssim += r.ssim;
      ++n;
      if (r.has_depth) {
        abs_err += r.abs_err;
        acc_01 += r.acc_01;
        acc_05 += r.acc_05;
        ++nd;
      }
    }
  };
  std::map<std::string, Acc> per_scene;
  Acc all;
  for (const auto& r : report.rows) {
    per_scene[r.scene].add(r);
    all.add(r);
  }
  auto line = [](const std::string& name, const Acc& a) {
    if (a.n == 0) return fmt::format("{:<24} {:>8} {:>8} {:>6} {:>9} {:>9} {:>9}\n", name, "-", "-", "n/a", "-", "-", "-");
    std::string depth = a.nd ? fmt::format("{:>9.5f} {:>9.4f} {:>9.4f}", a.abs_err / a.nd, a.acc_01 / a.nd,
                                           a.acc_05 / a.nd)
                             : fmt::format("{:>9} {:>9} {:>9}", "n/a", "n/a", "n/a");
    return fmt::format("{:<24} {:>8.3f} {:>8.4f} {:>6} {}\n", name, a.psnr / a.n, a.ssim / a.n, "n/a", depth);
  };
  std::string s = fmt::format("Evaluation ({} split, {} views)\nDepth errors: {}\n\n", report.split,
                              report.rows.size(), report.depth_normalization);
  s += fmt::format("{:<24} {:>8} {:>8} {:>6} {:>9} {:>9} {:>9}\n", "scene", "PSNR", "SSIM", "LPIPS", "Abs err",
                   "Acc 0.01", "Acc 0.05");
  for (const auto& [name, a] : per_scene) s += line(name, a);
  s += line("mean", all);
  return s;
}

}  // namespace svnerf
