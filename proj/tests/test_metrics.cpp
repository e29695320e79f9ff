#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "hssdct/error.hpp"
#include "hssdct/losses.hpp"
#include "hssdct/metrics.hpp"
#include "hssdct/ops.hpp"

using namespace hssdct;
using testing::random_tensor;

namespace {

double mse_oracle(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += std::pow(a.values()[i] - b.values()[i], 2);
  return acc / static_cast<double>(a.numel());
}

double ergas_oracle(const Tensor& pred, const Tensor& target, double ratio) {
  const std::size_t c = target.extent(0), n = target.numel() / c;
  double acc = 0.0;
  for (std::size_t b = 0; b < c; ++b) {
    double se = 0.0, mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      se += std::pow(pred.values()[b * n + i] - target.values()[b * n + i], 2);
      mu += target.values()[b * n + i];
    }
    mu /= static_cast<double>(n);
    acc += (se / static_cast<double>(n)) / (mu * mu);
  }
  return 100.0 / ratio * std::sqrt(acc / static_cast<double>(c));
}

Tensor permute_pixels(const Tensor& cube, const std::vector<std::size_t>& perm) {
  const std::size_t c = cube.extent(0), n = perm.size();
  Tensor out(cube.shape());
  auto o = out.mutable_values();
  for (std::size_t b = 0; b < c; ++b)
    for (std::size_t i = 0; i < n; ++i) o[b * n + i] = cube.values()[b * n + perm[i]];
  return out;
}

}  // namespace

TEST_CASE("psnr") {
  Rng rng(1);
  Tensor t = random_tensor(rng, {3, 8, 8}, 0, 1);
  CHECK(psnr(t, t) == 100.0);
  CHECK(psnr(add_scalar(t, 0.1), t, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
  Tensor p = random_tensor(rng, {3, 8, 8}, 0, 1);
  CHECK(std::abs(psnr(p, t, 1.0) - 10.0 * std::log10(1.0 / mse_oracle(p, t))) <= 1e-10);
  CHECK(std::abs(psnr(p, t, 2.0) - 10.0 * std::log10(4.0 / mse_oracle(p, t))) <= 1e-10);
  CHECK_THROWS_AS(psnr(p, Tensor({3, 8, 7})), DimensionError);
  CHECK_THROWS_AS(psnr(p, t, 0.0), MetricError);
}

TEST_CASE("spectral angle metric") {
  Rng rng(2);
  Tensor t = random_tensor(rng, {5, 4, 4}, 0.1, 1);
  CHECK(sam_metric(scale(t, 2.0), t) <= 0.03);
  Tensor p1({2, 1, 1}, {1, 0}), t1({2, 1, 1}, {0, 1});
  CHECK(sam_metric(p1, t1) == doctest::Approx(90.0).epsilon(1e-12));
  for (int trial = 0; trial < 10; ++trial) {
    Tensor p = random_tensor(rng, {5, 4, 4}, -1, 1), q = random_tensor(rng, {5, 4, 4}, -1, 1);
    CHECK(std::abs(sam_metric(p, q) - 180.0 / std::numbers::pi * sam_loss(p, q).item()) <= 1e-10);
    const double s = sam_metric(p, q);
    CHECK(s >= 0.0);
    CHECK(s <= 180.0);
  }
  CHECK_THROWS_AS(sam_metric(t, Tensor({5, 4, 3})), DimensionError);
}

TEST_CASE("rmse") {
  Rng rng(3);
  Tensor t = random_tensor(rng, {3, 8, 8}, 0, 1);
  CHECK(rmse(t, t) == 0.0);
  CHECK(rmse(add_scalar(t, 0.1), t) == doctest::Approx(0.1).epsilon(1e-12));
  for (int trial = 0; trial < 10; ++trial) {
    Tensor p = random_tensor(rng, {3, 8, 8}, 0, 1);
    const double r = rmse(p, t);
    CHECK(std::abs(r - std::sqrt(mse_oracle(p, t))) <= 1e-14);
    CHECK(std::abs(psnr(p, t, 1.0) - 10.0 * std::log10(1.0 / (r * r))) <= 1e-9);
  }
  CHECK_THROWS_AS(rmse(t, Tensor({3, 8, 7})), DimensionError);
}

TEST_CASE("ergas") {
  Rng rng(4);
  Tensor t = random_tensor(rng, {4, 6, 6}, 0.2, 1);
  CHECK(ergas(t, t, 4.0) == 0.0);

  // a per-band error of +-0.02 mu_b, signs in a checkerboard, gives RMSE_b = 0.02 mu_b
  Tensor p(t.shape());
  {
    auto pv = p.mutable_values();
    for (std::size_t b = 0; b < 4; ++b) {
      double mu = 0.0;
      for (std::size_t i = 0; i < 36; ++i) mu += t.values()[b * 36 + i];
      mu /= 36.0;
      for (std::size_t i = 0; i < 36; ++i) pv[b * 36 + i] = t.values()[b * 36 + i] + (i % 2 ? 0.02 : -0.02) * mu;
    }
  }
  CHECK(ergas(p, t, 4.0) == doctest::Approx(0.5).epsilon(1e-12));

  for (int trial = 0; trial < 10; ++trial) {
    Tensor q = random_tensor(rng, {4, 6, 6}, 0, 1);
    CHECK(std::abs(ergas(q, t, 4.0) - ergas_oracle(q, t, 4.0)) <= 1e-10);
  }

  Tensor zero_band = t.detach();
  for (std::size_t i = 0; i < 36; ++i) zero_band.mutable_values()[2 * 36 + i] = 0.0;
  try {
    ergas(t, zero_band, 4.0);
    FAIL("zero band mean accepted");
  } catch (const MetricError& e) {
    CHECK(std::string(e.what()).find("band 2") != std::string::npos);
  }
  CHECK_THROWS_AS(ergas(t, Tensor({4, 6, 5}), 4.0), DimensionError);
}

TEST_CASE("metrics respond monotonically to noise amplitude") {
  Rng rng(5);
  Tensor t = random_tensor(rng, {4, 16, 16}, 0.2, 0.8);
  int violations = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const double small = 0.01 * (1 + trial), large = 2 * small;
    Tensor a = add(t, random_tensor(rng, {4, 16, 16}, -small, small));
    Tensor b = add(t, random_tensor(rng, {4, 16, 16}, -large, large));
    if (rmse(b, t) < rmse(a, t)) ++violations;
    if (ergas(b, t, 4.0) < ergas(a, t, 4.0)) ++violations;
    if (psnr(b, t) > psnr(a, t)) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("metrics are invariant under a shared pixel permutation") {
  Rng rng(6);
  Tensor t = random_tensor(rng, {4, 5, 5}, 0.1, 1), p = random_tensor(rng, {4, 5, 5}, 0.1, 1);
  std::vector<std::size_t> perm(25);
  for (std::size_t i = 0; i < 25; ++i) perm[i] = i;
  for (std::size_t i = 24; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  Tensor tp = permute_pixels(t, perm), pp = permute_pixels(p, perm);
  CHECK(psnr(pp, tp) == doctest::Approx(psnr(p, t)).epsilon(1e-12));
  CHECK(sam_metric(pp, tp) == doctest::Approx(sam_metric(p, t)).epsilon(1e-12));
  CHECK(rmse(pp, tp) == doctest::Approx(rmse(p, t)).epsilon(1e-12));
  CHECK(ergas(pp, tp, 4.0) == doctest::Approx(ergas(p, t, 4.0)).epsilon(1e-12));
}

TEST_CASE("report aggregation") {
  Rng rng(7);
  Tensor t = random_tensor(rng, {3, 4, 4}, 0.2, 1);
  Tensor p = random_tensor(rng, {3, 4, 4}, 0.2, 1);
  MetricReport r = evaluate(p, t, 1.0, 4.0);
  CHECK(r.psnr_db == psnr(p, t, 1.0));
  CHECK(r.sam_deg == sam_metric(p, t));
  CHECK(r.rmse == rmse(p, t));
  CHECK(r.ergas == ergas(p, t, 4.0));
  CHECK(r.psnr_db > 0.0);
  CHECK(r.psnr_db <= 100.0);
  MetricReport s = evaluate(t, t, 1.0, 4.0);
  MetricReport m = average({r, s});
  CHECK(m.rmse == doctest::Approx(r.rmse / 2));
  CHECK(m.psnr_db == doctest::Approx((r.psnr_db + 100.0) / 2));
  CHECK(r.rows().size() == 4);
}
