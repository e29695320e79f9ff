#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hssdct/tensor.hpp"

namespace hssdct {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(range^2 / MSE) over the whole cube, capped at 100 dB.
double psnr(const Tensor& pred, const Tensor& target, double data_range = 1.0);
/// Mean per-pixel spectral angle in degrees (same clamp and guard as sam_loss).
double sam_metric(const Tensor& pred, const Tensor& target);
double rmse(const Tensor& pred, const Tensor& target);
/// (100 / ratio) * sqrt(mean_b (RMSE_b / mean(target_b))^2).
double ergas(const Tensor& pred, const Tensor& target, double ratio);

struct MetricReport {
  double psnr_db = 0.0;
  double sam_deg = 0.0;
  double rmse = 0.0;
  double ergas = 0.0;
  double data_range = 1.0;
  double ratio = 1.0;

  /// (metric, value) rows in a fixed order.
  std::vector<std::pair<std::string, double>> rows() const;
};

MetricReport evaluate(const Tensor& pred, const Tensor& target, double data_range, double ratio);

/// Per-field arithmetic mean of several reports.
MetricReport average(const std::vector<MetricReport>& reports);

}  // namespace hssdct
