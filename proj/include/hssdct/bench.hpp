#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hssdct/network.hpp"

namespace hssdct {

enum class AttentionVariant { Factorized, Naive, Compressed };

const char* to_string(AttentionVariant variant);
/// Accepts "factorized", "naive", "compressed"; throws ConfigError otherwise.
AttentionVariant parse_variant(const std::string& name);

struct BenchRecord {
  AttentionVariant variant = AttentionVariant::Factorized;
  std::size_t n_tokens = 0;
  std::size_t channels = 0;
  double wall_ns = 0.0;  // median over repeats
  std::uint64_t flops = 0;
};

// Analytic counts: one multiply-add is two flops.

std::uint64_t matmul_flops(std::uint64_t m, std::uint64_t k, std::uint64_t n);
/// Naive: (Q Vt) then (. V). Factorized: (Vt V) then Q (.). Compressed pools
/// V to ceil(sqrt(N)/2)^2 tokens first; N must then be a perfect square.
std::uint64_t spa_sc_flops(AttentionVariant variant, std::uint64_t n_tokens, std::uint64_t channels);
std::uint64_t spe_sc_flops(std::uint64_t n_tokens, std::uint64_t channels);

struct FlopRow {
  std::string layer;
  std::uint64_t flops = 0;
};

/// Per-layer counts of convolutions, projections, attention products and the
/// iLayerNorm MLPs for one forward pass at HR size height x width.
/// Elementwise work is not counted.
std::vector<FlopRow> model_flops(const ModelConfig& config, std::size_t height, std::size_t width);
std::uint64_t total_flops(std::span<const FlopRow> rows);

struct ScalingOptions {
  std::size_t repeats = 5;
  std::size_t warmup = 2;
  std::uint64_t seed = 0;
};

struct ScalingResult {
  AttentionVariant variant = AttentionVariant::Factorized;
  std::vector<BenchRecord> records;
  /// Least-squares slope of log(wall) against log(N) over the largest half
  /// of the sizes.
  double exponent = 0.0;
  /// Largest relative difference between this variant and the naive order on
  /// the timed instances (compressed is compared against naive on pooled V).
  double max_rel_diff = 0.0;
};

/// Times spa_sc at each token count on random Q, V in [N x channels].
/// Needs >= 4 sizes spanning >= 16x and >= 5 repeats; a median below 1 us
/// raises BenchError.
ScalingResult scaling_run(AttentionVariant variant, std::span<const std::size_t> token_counts,
                          std::size_t channels, const ScalingOptions& options = {});

double fit_exponent(std::span<const BenchRecord> records);

void write_bench_csv(const std::filesystem::path& path, std::span<const ScalingResult> results);
/// Log-log line chart of wall time against token count, one line per variant.
void write_bench_svg(const std::filesystem::path& path, std::span<const ScalingResult> results);

}  // namespace hssdct
