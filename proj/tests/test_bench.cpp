#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "hssdct/bench.hpp"
#include "hssdct/error.hpp"

using namespace hssdct;
namespace fs = std::filesystem;

TEST_CASE("flop formulas") {
  CHECK(matmul_flops(2, 3, 4) == 48);
  CHECK(spa_sc_flops(AttentionVariant::Factorized, 64, 16) == 65536);
  CHECK(spa_sc_flops(AttentionVariant::Naive, 64, 16) == 2 * 64 * 16 * 64 + 2 * 64 * 64 * 16);
  CHECK(spe_sc_flops(64, 16) == 65536);
  // compressed at N = 64 pools to 16 tokens
  CHECK(spa_sc_flops(AttentionVariant::Compressed, 64, 16) == 2 * 16 * 16 * 16 + 2 * 64 * 16 * 16);
  CHECK_THROWS_AS(spa_sc_flops(AttentionVariant::Compressed, 63, 16), ConfigError);
}

TEST_CASE("flop counts scale with the token count as claimed") {
  for (std::uint64_t d : {8u, 16u, 32u}) {
    for (std::uint64_t n = 16; n <= 16384; n *= 2) {
      CHECK(spa_sc_flops(AttentionVariant::Factorized, 2 * n, d) ==
            2 * spa_sc_flops(AttentionVariant::Factorized, n, d));
      CHECK(spe_sc_flops(2 * n, d) == 2 * spe_sc_flops(n, d));
      // the N^2 d term of the naive order quadruples
      const auto quadratic = [d](std::uint64_t m) { return 4 * m * m * d; };
      CHECK(spa_sc_flops(AttentionVariant::Naive, n, d) == quadratic(n));
      CHECK(quadratic(2 * n) == 4 * quadratic(n));
    }
  }
}

TEST_CASE("model flop table") {
  const auto rows = model_flops(ModelConfig::desk(), 32, 32);
  CHECK_FALSE(rows.empty());
  std::uint64_t sum = 0;
  for (const auto& r : rows) {
    CHECK(r.flops > 0);
    sum += r.flops;
  }
  CHECK(total_flops(rows) == sum);
  // the norm MLPs act on a pooled vector; every other row is per-pixel
  const auto big = model_flops(ModelConfig::desk(), 64, 64);
  REQUIRE(big.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const bool pooled = rows[i].layer.ends_with(".norm");
    CHECK(big[i].flops == (pooled ? 1 : 4) * rows[i].flops);
  }
}

TEST_CASE("exponent fit") {
  std::vector<BenchRecord> linear, quadratic;
  for (std::size_t n : {64u, 256u, 1024u, 4096u}) {
    linear.push_back({AttentionVariant::Factorized, n, 32, 3.0 * static_cast<double>(n), 0});
    quadratic.push_back({AttentionVariant::Naive, n, 32, 0.5 * static_cast<double>(n * n), 0});
  }
  CHECK(fit_exponent(linear) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit_exponent(quadratic) == doctest::Approx(2.0).epsilon(1e-12));
  // only the largest half of the sizes enters the fit
  linear[0].wall_ns = 1e9;
  CHECK(fit_exponent(linear) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("scaling run guards") {
  const std::vector<std::size_t> three{64, 256, 1024};
  CHECK_THROWS_AS(scaling_run(AttentionVariant::Factorized, three, 8), BenchError);
  const std::vector<std::size_t> narrow{64, 128, 256, 512};
  CHECK_THROWS_AS(scaling_run(AttentionVariant::Factorized, narrow, 8), BenchError);
  const std::vector<std::size_t> grid{4, 16, 64, 256};
  CHECK_THROWS_AS(scaling_run(AttentionVariant::Factorized, grid, 8, {.repeats = 3, .warmup = 0, .seed = 0}),
                  BenchError);
  // sub-microsecond medians are rejected
  const std::vector<std::size_t> tiny{1, 4, 9, 16};
  CHECK_THROWS_AS(scaling_run(AttentionVariant::Factorized, tiny, 1), BenchError);
}

TEST_CASE("scaling run records and outputs") {
  const std::vector<std::size_t> grid{256, 1024, 4096, 16384};
  ScalingResult r = scaling_run(AttentionVariant::Factorized, grid, 8);
  REQUIRE(r.records.size() == 4);
  CHECK(r.max_rel_diff <= 1e-9);
  for (const auto& rec : r.records) {
    CHECK(rec.wall_ns >= 1000.0);
    CHECK(rec.flops == spa_sc_flops(AttentionVariant::Factorized, rec.n_tokens, 8));
  }
  CHECK(std::isfinite(r.exponent));

  const fs::path dir = fs::temp_directory_path() / ("hssdct_test_bench_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::vector<ScalingResult> all{r};
  write_bench_csv(dir / "bench.csv", all);
  write_bench_svg(dir / "bench.svg", all);
  std::ifstream csv(dir / "bench.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "variant,n_tokens,channels,wall_ns,flops");
  std::ifstream svg(dir / "bench.svg");
  std::string first;
  std::getline(svg, first);
  CHECK(first.find("<svg") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("variant names") {
  for (auto v : {AttentionVariant::Factorized, AttentionVariant::Naive, AttentionVariant::Compressed})
    CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("softmax"), ConfigError);
}
