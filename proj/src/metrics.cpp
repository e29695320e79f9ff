#include "hssdct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hssdct/error.hpp"
#include "hssdct/losses.hpp"
#include "hssdct/ops.hpp"

namespace hssdct {

namespace {

void require_pair(const Tensor& pred, const Tensor& target, const char* op) {
  if (pred.shape() != target.shape()) {
    throw DimensionError(std::string(op) + ": prediction " + shape_str(pred.shape()) +
                         " vs target " + shape_str(target.shape()));
  }
  if (pred.numel() == 0) throw DimensionError(std::string(op) + ": empty cubes");
}

double mse(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace

double psnr(const Tensor& pred, const Tensor& target, double data_range) {
  require_pair(pred, target, "psnr");
  if (!(data_range > 0.0)) throw MetricError("psnr: data_range must be > 0");
  const double err = mse(pred.values(), target.values());
  const double peak = data_range * data_range;
  if (err < peak * 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak / err));
}

double rmse(const Tensor& pred, const Tensor& target) {
  require_pair(pred, target, "rmse");
  return std::sqrt(mse(pred.values(), target.values()));
}

double sam_metric(const Tensor& pred, const Tensor& target) {
  require_pair(pred, target, "sam");
  if (pred.extent(0) < 2) throw DimensionError("sam needs at least 2 bands");
  const std::size_t c = pred.extent(0);
  const std::size_t p = pred.numel() / c;
  const auto pv = pred.values();
  const auto tv = target.values();
  double total = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    double dot = 0.0, np = 0.0, nt = 0.0;
    for (std::size_t b = 0; b < c; ++b) {
      dot += pv[b * p + j] * tv[b * p + j];
      np += pv[b * p + j] * pv[b * p + j];
      nt += tv[b * p + j] * tv[b * p + j];
    }
    const double cosine = dot / (std::sqrt(np) * std::sqrt(nt) + kSamNormGuard);
    total += std::acos(std::clamp(cosine, -1.0 + kAcosClamp, 1.0 - kAcosClamp));
  }
  return total / static_cast<double>(p) * 180.0 / std::numbers::pi;
}

double ergas(const Tensor& pred, const Tensor& target, double ratio) {
  require_pair(pred, target, "ergas");
  if (!(ratio > 0.0)) throw MetricError("ergas: ratio must be > 0");
  const std::size_t c = pred.extent(0);
  const std::size_t p = pred.numel() / c;
  const auto pv = pred.values();
  const auto tv = target.values();
  double acc = 0.0;
  for (std::size_t b = 0; b < c; ++b) {
    double mu = 0.0;
    for (std::size_t j = 0; j < p; ++j) mu += tv[b * p + j];
    mu /= static_cast<double>(p);
    if (mu == 0.0) throw MetricError("ergas: band " + std::to_string(b) + " has zero mean");
    const double band_mse = mse(pv.subspan(b * p, p), tv.subspan(b * p, p));
    acc += band_mse / (mu * mu);
  }
  return 100.0 / ratio * std::sqrt(acc / static_cast<double>(c));
}

std::vector<std::pair<std::string, double>> MetricReport::rows() const {
  return {{"psnr_db", psnr_db}, {"sam_deg", sam_deg}, {"rmse", rmse}, {"ergas", ergas}};
}

MetricReport evaluate(const Tensor& pred, const Tensor& target, double data_range, double ratio) {
  MetricReport r;
  r.data_range = data_range;
  r.ratio = ratio;
  r.psnr_db = psnr(pred, target, data_range);
  r.sam_deg = sam_metric(pred, target);
  r.rmse = rmse(pred, target);
  r.ergas = ergas(pred, target, ratio);
  return r;
}

MetricReport average(const std::vector<MetricReport>& reports) {
  MetricReport out;
  if (reports.empty()) return out;
  out.data_range = reports.front().data_range;
  out.ratio = reports.front().ratio;
  for (const auto& r : reports) {
    out.psnr_db += r.psnr_db;
    out.sam_deg += r.sam_deg;
    out.rmse += r.rmse;
    out.ergas += r.ergas;
  }
  const double n = static_cast<double>(reports.size());
  out.psnr_db /= n;
  out.sam_deg /= n;
  out.rmse /= n;
  out.ergas /= n;
  return out;
}

}  // namespace hssdct
