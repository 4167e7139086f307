#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "svnerf/tensor.hpp"

namespace svnerf {

// Region of an image to evaluate; the default (0 x 0) means the whole image.
struct EvalWindow {
  int width = 0;
  int height = 0;
};

double mse(const Image& pred, const Image& gt, EvalWindow window = {});
// 10 log10(1 / MSE), 99 dB when MSE < 1e-10.
double psnr(const Image& pred, const Image& gt, EvalWindow window = {});
double psnr_from_mse(double mse);

// Luma (0.299, 0.587, 0.114) of an RGB image, or the single channel of a grey one.
Mat<double> luma(const Image& img, EvalWindow window = {});
// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2.
double ssim(const Image& pred, const Image& gt, EvalWindow window = {});

struct DepthMetrics {
  double abs_err = 0;
  std::vector<double> thresholds;
  std::vector<double> accuracy;  // fraction with |pred - gt| < threshold
  std::size_t count = 0;
};

// `scale` divides the absolute differences first (1 keeps scene units).
DepthMetrics depth_metrics(const Image& pred, const Image& gt, const std::vector<unsigned char>& mask,
                           const std::vector<double>& thresholds = {0.01, 0.05}, double scale = 1.0);

struct ReportRow {
  std::string scene;
  int target = 0;
  double psnr = 0;
  double ssim = 0;
  double abs_err = 0;
  double acc_01 = 0;
  double acc_05 = 0;
  bool has_depth = false;
};

struct Report {
  std::string split;
  std::string depth_normalization;
  std::vector<ReportRow> rows;
};

// Tab-separated table with a '#' header block; columns are stable.
std::string format_report_table(const Report& report);
// Human-readable summary with per-scene means and an overall mean.
std::string format_report_summary(const Report& report);

}  // namespace svnerf
