#include "hssdct/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "hssdct/blocks.hpp"
#include "hssdct/error.hpp"
#include "hssdct/ops.hpp"
#include "hssdct/rng.hpp"

namespace hssdct {

const char* to_string(AttentionVariant variant) {
  switch (variant) {
    case AttentionVariant::Factorized: return "factorized";
    case AttentionVariant::Naive: return "naive";
    case AttentionVariant::Compressed: return "compressed";
  }
  return "?";
}

AttentionVariant parse_variant(const std::string& name) {
  if (name == "factorized") return AttentionVariant::Factorized;
  if (name == "naive") return AttentionVariant::Naive;
  if (name == "compressed") return AttentionVariant::Compressed;
  throw ConfigError("unknown attention variant '" + name + "'");
}

std::uint64_t matmul_flops(std::uint64_t m, std::uint64_t k, std::uint64_t n) { return 2 * m * k * n; }

namespace {

std::size_t exact_side(std::uint64_t n_tokens) {
  auto side = static_cast<std::uint64_t>(std::llround(std::sqrt(static_cast<double>(n_tokens))));
  if (side * side != n_tokens) {
    throw ConfigError("compressed variant needs a square token count, got " + std::to_string(n_tokens));
  }
  return side;
}

}  // namespace

std::uint64_t spa_sc_flops(AttentionVariant variant, std::uint64_t n, std::uint64_t d) {
  switch (variant) {
    case AttentionVariant::Naive:
      return matmul_flops(n, d, n) + matmul_flops(n, n, d);
    case AttentionVariant::Factorized:
      return matmul_flops(d, n, d) + matmul_flops(n, d, d);
    case AttentionVariant::Compressed: {
      const std::uint64_t side = (exact_side(n) + 1) / 2;
      const std::uint64_t m = side * side;
      return matmul_flops(d, m, d) + matmul_flops(n, d, d);
    }
  }
  return 0;
}

std::uint64_t spe_sc_flops(std::uint64_t n, std::uint64_t d) {
  return matmul_flops(d, n, d) + matmul_flops(d, d, n);
}

namespace {

std::uint64_t conv_flops(std::uint64_t cout, std::uint64_t cin_per_group, std::uint64_t k,
                         std::uint64_t pixels) {
  return 2 * cout * cin_per_group * k * k * pixels;
}

void sscl_rows(std::vector<FlopRow>& rows, const std::string& prefix, const ModelConfig& cfg,
               std::size_t height, std::size_t width, std::size_t window) {
  const std::uint64_t c = cfg.feat, h = c / 2;
  const auto layout = make_window_layout({cfg.feat, height, width}, window);
  const std::uint64_t n = layout.tokens();
  const std::uint64_t windows = layout.count();
  const std::uint64_t pixels = windows * n;
  rows.push_back({prefix + ".norm", matmul_flops(1, c, c) + matmul_flops(1, c, 2 * c)});
  rows.push_back({prefix + ".ssfe",
                  conv_flops(h, 1, 3, pixels) + 2 * conv_flops(h, h, 1, pixels) +
                      2 * conv_flops(c, c, 1, pixels)});
  const auto variant = cfg.compress_values ? AttentionVariant::Compressed : AttentionVariant::Factorized;
  rows.push_back({prefix + ".spa_sc", windows * spa_sc_flops(variant, n, c)});
  rows.push_back({prefix + ".spe_sc", windows * spe_sc_flops(n, c)});
  rows.push_back({prefix + ".ssfa", 2 * conv_flops(c, c, 1, pixels)});
}

void branch_rows(std::vector<FlopRow>& rows, const std::string& prefix, std::size_t in_bands,
                 const ModelConfig& cfg, std::size_t height, std::size_t width) {
  const std::uint64_t c = cfg.feat, pixels = height * width;
  rows.push_back({prefix + ".shallow", conv_flops(c, in_bands, 3, pixels)});
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const auto block = prefix + ".block" + std::to_string(b);
    const auto windows = layer_windows(cfg.block_windows[b]);
    for (std::size_t l = 0; l < windows.size(); ++l) {
      sscl_rows(rows, block + ".layer" + std::to_string(l), cfg, height, width, windows[l]);
    }
    rows.push_back({block + ".fuse", conv_flops(c, 3 * c, 1, pixels)});
  }
}

}  // namespace

std::vector<FlopRow> model_flops(const ModelConfig& config, std::size_t height, std::size_t width) {
  config.validate();
  if (height == 0 || width == 0) throw ConfigError("model_flops: empty image");
  std::vector<FlopRow> rows;
  branch_rows(rows, "spe", config.hsi_bands, config, height, width);
  branch_rows(rows, "spa", config.msi_bands, config, height, width);
  const std::uint64_t c = config.feat, pixels = height * width;
  rows.push_back({"head.conv1", conv_flops(c, c, 3, pixels)});
  rows.push_back({"head.conv2", conv_flops(config.hsi_bands, c, 3, pixels)});
  return rows;
}

std::uint64_t total_flops(std::span<const FlopRow> rows) {
  std::uint64_t total = 0;
  for (const auto& r : rows) total += r.flops;
  return total;
}

// ---------------------------------------------------------------------------
// timing

double fit_exponent(std::span<const BenchRecord> records) {
  std::vector<BenchRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.n_tokens < b.n_tokens; });
  const std::size_t take = (sorted.size() + 1) / 2;
  if (take < 2) throw BenchError("exponent fit needs at least 3 sizes");
  const auto first = sorted.end() - static_cast<std::ptrdiff_t>(take);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto it = first; it != sorted.end(); ++it) {
    const double x = std::log(static_cast<double>(it->n_tokens));
    const double y = std::log(it->wall_ns);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = static_cast<double>(take);
  const double denom = k * sxx - sx * sx;
  if (denom <= 0) throw BenchError("exponent fit needs distinct sizes");
  return (k * sxy - sx * sy) / denom;
}

namespace {

Tensor random_tokens(Rng& rng, std::size_t n, std::size_t d) {
  Tensor t({n, d});
  for (auto& x : t.mutable_values()) x = rng.normal();
  return t;
}

double rel_diff(const Tensor& a, const Tensor& b) {
  const auto av = a.values(), bv = b.values();
  double num = 0, den = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    num = std::max(num, std::abs(av[i] - bv[i]));
    den = std::max(den, std::abs(bv[i]));
  }
  return den > 0 ? num / den : num;
}

}  // namespace

ScalingResult scaling_run(AttentionVariant variant, std::span<const std::size_t> token_counts,
                          std::size_t channels, const ScalingOptions& options) {
  if (token_counts.size() < 4) throw BenchError("scaling_run needs at least 4 token counts");
  const auto [lo, hi] = std::minmax_element(token_counts.begin(), token_counts.end());
  if (*lo == 0 || *hi < 16 * *lo) throw BenchError("token counts must span at least 16x");
  if (options.repeats < 5) throw BenchError("scaling_run needs at least 5 repeats");
  if (channels == 0) throw BenchError("channels must be >= 1");

  NoGradGuard no_grad;
  Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(variant)));
  ScalingResult result;
  result.variant = variant;
  for (std::size_t n : token_counts) {
    const Tensor q = random_tokens(rng, n, channels);
    const Tensor v = random_tokens(rng, n, channels);
    const std::size_t side = variant == AttentionVariant::Compressed ? exact_side(n) : 0;
    auto run = [&] {
      switch (variant) {
        case AttentionVariant::Naive: return spa_sc_naive(q, v);
        case AttentionVariant::Factorized: return spa_sc(q, v);
        case AttentionVariant::Compressed: return spa_sc_compressed(q, v, side);
      }
      return Tensor();
    };
    for (std::size_t i = 0; i < options.warmup; ++i) run();
    std::vector<double> times;
    Tensor out;
    for (std::size_t i = 0; i < options.repeats; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      out = run();
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    const double median = times[times.size() / 2];
    if (median < 1000.0) {
      throw BenchError("median wall time " + std::to_string(median) + " ns at N=" + std::to_string(n) +
                       " is below timer resolution; use larger token counts");
    }
    Tensor reference;
    if (variant == AttentionVariant::Compressed) {
      const Tensor pooled = pool_tokens(v, side);
      reference = scale(matmul(matmul(q, pooled, false, true), pooled),
                        1.0 / std::sqrt(static_cast<double>(channels)));
    } else {
      reference = variant == AttentionVariant::Naive ? spa_sc(q, v) : spa_sc_naive(q, v);
    }
    result.max_rel_diff = std::max(result.max_rel_diff, rel_diff(out, reference));
    result.records.push_back({variant, n, channels, median, spa_sc_flops(variant, n, channels)});
  }
  result.exponent = fit_exponent(result.records);
  return result;
}

void write_bench_csv(const std::filesystem::path& path, std::span<const ScalingResult> results) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "variant,n_tokens,channels,wall_ns,flops\n";
  char buf[160];
  for (const auto& r : results) {
    for (const auto& rec : r.records) {
      std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.1f,%llu\n", to_string(rec.variant), rec.n_tokens,
                    rec.channels, rec.wall_ns, static_cast<unsigned long long>(rec.flops));
      out << buf;
    }
  }
}

void write_bench_svg(const std::filesystem::path& path, std::span<const ScalingResult> results) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& r : results) {
    for (const auto& rec : r.records) {
      x0 = std::min(x0, std::log10(static_cast<double>(rec.n_tokens)));
      x1 = std::max(x1, std::log10(static_cast<double>(rec.n_tokens)));
      y0 = std::min(y0, std::log10(rec.wall_ns));
      y1 = std::max(y1, std::log10(rec.wall_ns));
    }
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  constexpr double kW = 480, kH = 360, kPad = 50;
  auto px = [&](double x) { return kPad + (x - x0) / (x1 - x0) * (kW - 2 * kPad); };
  auto py = [&](double y) { return kH - kPad - (y - y0) / (y1 - y0) * (kH - 2 * kPad); };
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c"};

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n",
                kW, kH);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"#888\"/>\n",
                kPad, kPad, kW - 2 * kPad, kH - 2 * kPad);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">log10 N</text>\n",
                kW / 2, kH - 15);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"15\" y=\"%g\" transform=\"rotate(-90 15 %g)\" "
                "text-anchor=\"middle\">log10 wall ns</text>\n",
                kH / 2, kH / 2);
  out << buf;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const char* color = kColors[static_cast<std::size_t>(r.variant) % 3];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& rec : r.records) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(std::log10(static_cast<double>(rec.n_tokens))),
                    py(std::log10(rec.wall_ns)));
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\">%s (slope %.2f)</text>\n",
                  kPad + 10, kPad + 18 + 16 * static_cast<double>(i), color, to_string(r.variant),
                  r.exponent);
    out << buf;
  }
  out << "</svg>\n";
}

}  // namespace hssdct
