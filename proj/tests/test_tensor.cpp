#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "hssdct/error.hpp"
#include "hssdct/gradcheck.hpp"
#include "hssdct/ops.hpp"
#include "hssdct/rng.hpp"

using namespace hssdct;
using testing::random_tensor;

namespace {

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a.at({i, p}) * b.at({p, j});
  return out;
}

// Direct cross-correlation with reflect padding, one loop per index.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t groups) {
  const long h = static_cast<long>(x.extent(1)),
             wd = static_cast<long>(x.extent(2));
  const long cout = static_cast<long>(w.extent(0)), cpg = static_cast<long>(w.extent(1)),
             k = static_cast<long>(w.extent(2));
  const long r = k / 2;
  const long out_per_group = cout / static_cast<long>(groups);
  std::vector<double> out(static_cast<std::size_t>(cout * h * wd), 0.0);
  for (long o = 0; o < cout; ++o) {
    const long g = o / out_per_group;
    for (long y = 0; y < h; ++y)
      for (long xx = 0; xx < wd; ++xx) {
        double acc = bias.defined() ? bias.values()[static_cast<std::size_t>(o)] : 0.0;
        for (long c = 0; c < cpg; ++c)
          for (long dy = -r; dy <= r; ++dy)
            for (long dx = -r; dx <= r; ++dx) {
              const long sy = testing::mirror(y + dy, h), sx = testing::mirror(xx + dx, wd);
              const long ci = g * cpg + c;
              acc += w.at({static_cast<std::size_t>(o), static_cast<std::size_t>(c),
                           static_cast<std::size_t>(dy + r), static_cast<std::size_t>(dx + r)}) *
                     x.at({static_cast<std::size_t>(ci), static_cast<std::size_t>(sy),
                           static_cast<std::size_t>(sx)});
            }
        out[static_cast<std::size_t>((o * h + y) * wd + xx)] = acc;
      }
  }
  return out;
}

}  // namespace

TEST_CASE("tensor construction and accessors") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6);
  CHECK(t.matrix()(1, 0) == 4);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.item(), UsageError);
  CHECK_THROWS_AS(t.at({2, 0}), DimensionError);
  CHECK(Tensor::scalar(3.5).item() == 3.5);
  CHECK(Tensor::full({2}, 7.0).values()[1] == 7.0);
  Tensor alias = t;
  alias.mutable_values()[0] = 9;
  CHECK(t.values()[0] == 9);
  Tensor copy = t.detach();
  copy.mutable_values()[0] = 1;
  CHECK(t.values()[0] == 9);
}

TEST_CASE("matmul examples") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  CHECK(testing::bit_equal(matmul(eye, m).values(), m.values()));
  CHECK(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})).item() == 11);
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);

  Rng rng(1);
  Tensor a = random_tensor(rng, {5, 3}), b = random_tensor(rng, {3, 4});
  CHECK(testing::max_abs_diff(matmul(a, b).values(), naive_matmul(a, b)) < 1e-14);

  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor r = random_tensor(rng, {5, 4});
  auto f = [&] { return sum_all(mul(matmul(a, b), r)); };
  CHECK(fd_check(f, {a, b}, {.step = 1e-5}).max_rel_error <= 1e-6);
}

TEST_CASE("matmul transposed flags and batches agree with explicit transposes") {
  Rng rng(2);
  Tensor a = random_tensor(rng, {2, 4, 3}), b = random_tensor(rng, {2, 5, 4});
  Tensor viaflags = matmul(a, b, true, true);
  Tensor explicit_t = matmul(transpose(a), transpose(b));
  CHECK(testing::max_abs_diff(viaflags.values(), explicit_t.values()) < 1e-14);
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor ai = reshape(slice(a, 0, i, i + 1), {4, 3}), bi = reshape(slice(b, 0, i, i + 1), {5, 4});
    Tensor ref = matmul(transpose(ai), transpose(bi));
    Tensor got = reshape(slice(viaflags, 0, i, i + 1), {3, 5});
    CHECK(testing::max_abs_diff(got.values(), ref.values()) < 1e-14);
  }
}

TEST_CASE("matmul associativity") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 1 + rng.below(8), k = 1 + rng.below(8), n = 1 + rng.below(8), p = 1 + rng.below(8);
    Tensor a = random_tensor(rng, {m, k}), b = random_tensor(rng, {k, n}), c = random_tensor(rng, {n, p});
    Tensor left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    CHECK(testing::max_abs_diff(left.values(), right.values()) <= 1e-9 * testing::max_abs(left.values()));
  }
}

TEST_CASE("conv2d examples") {
  SUBCASE("constant image through 1x1 kernel") {
    Tensor x = Tensor::full({1, 4, 5}, 0.7);
    Tensor w({1, 1, 1, 1}, std::vector<double>{2.5});
    Tensor y = conv2d(x, w, Tensor(), 0);
    for (double v : y.values()) CHECK(v == doctest::Approx(1.75).epsilon(1e-15));
  }
  SUBCASE("impulse response is the kernel read back to front") {
    Tensor x({1, 5, 5});
    x.mutable_values()[2 * 5 + 2] = 1.0;
    Rng rng(4);
    Tensor w = random_tensor(rng, {1, 1, 3, 3});
    Tensor y = conv2d(x, w, Tensor(), 1);
    for (std::size_t dy = 0; dy < 3; ++dy)
      for (std::size_t dx = 0; dx < 3; ++dx) CHECK(y.at({0, 1 + dy, 1 + dx}) == w.at({0, 0, 2 - dy, 2 - dx}));
  }
  SUBCASE("random input matches the direct loop, all paths") {
    Rng rng(5);
    Tensor x = random_tensor(rng, {4, 8, 7});
    Tensor w = random_tensor(rng, {6, 4, 3, 3}), b = random_tensor(rng, {6});
    CHECK(testing::max_abs_diff(conv2d(x, w, b, 1).values(), naive_conv(x, w, b, 1)) < 1e-13);
    Tensor w5 = random_tensor(rng, {4, 2, 5, 5});
    CHECK(testing::max_abs_diff(conv2d(x, w5, Tensor(), 2, 2).values(), naive_conv(x, w5, Tensor(), 2)) < 1e-13);
    Tensor wd = random_tensor(rng, {4, 1, 3, 3});
    CHECK(testing::max_abs_diff(conv2d(x, wd, Tensor(), 1, 4).values(),
                                naive_conv(x, wd, Tensor(), 4)) < 1e-13);
    Tensor w1 = random_tensor(rng, {3, 4, 1, 1});
    CHECK(testing::max_abs_diff(conv2d(x, w1, Tensor(), 0).values(), naive_conv(x, w1, Tensor(), 1)) < 1e-13);
  }
  SUBCASE("batched input equals per-image calls") {
    Rng rng(6);
    Tensor x = random_tensor(rng, {2, 3, 5, 5}), w = random_tensor(rng, {2, 3, 3, 3});
    Tensor y = conv2d(x, w, Tensor(), 1);
    for (std::size_t i = 0; i < 2; ++i) {
      Tensor xi = reshape(slice(x, 0, i, i + 1), {3, 5, 5});
      Tensor yi = reshape(slice(y, 0, i, i + 1), {2, 5, 5});
      CHECK(testing::max_abs_diff(yi.values(), conv2d(xi, w, Tensor(), 1).values()) < 1e-14);
    }
  }
  SUBCASE("gradients against finite differences") {
    Rng rng(7);
    Tensor x = random_tensor(rng, {4, 8, 8}, -1, 1, true), w = random_tensor(rng, {6, 4, 3, 3}, -1, 1, true);
    Tensor r = random_tensor(rng, {6, 8, 8});
    auto f = [&] { return sum_all(mul(conv2d(x, w, Tensor(), 1), r)); };
    CHECK(fd_check(f, {x, w}, {.step = 1e-5}).max_rel_error <= 1e-5);
  }
  SUBCASE("errors") {
    Tensor x({4, 5, 5});
    CHECK_THROWS_AS(conv2d(x, Tensor({2, 4, 2, 2}), Tensor(), 0), ConfigError);
    CHECK_THROWS_AS(conv2d(x, Tensor({3, 4, 3, 3}), Tensor(), 0), ConfigError);
    CHECK_THROWS_AS(conv2d(x, Tensor({3, 1, 3, 3}), Tensor(), 1, 3), ConfigError);
    CHECK_THROWS_AS(conv2d(x, Tensor({3, 3, 3, 3}), Tensor(), 1), DimensionError);
  }
}

TEST_CASE("elementwise examples") {
  Rng rng(8);
  Tensor x = random_tensor(rng, {3, 4});
  CHECK(testing::bit_equal(add(x, Tensor({3, 4})).values(), x.values()));
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK_THROWS_AS(add(x, Tensor({4, 3})), DimensionError);

  Tensor half({1}, std::vector<double>{0.5}, true);
  Tensor y = acos(half);
  CHECK(y.item() == doctest::Approx(1.0471975512).epsilon(1e-10));
  backward(sum_all(y));
  CHECK(half.grad()[0] == doctest::Approx(-1.0 / std::sqrt(0.75)).epsilon(1e-12));

  Tensor edge({1}, std::vector<double>{1.0}, true);
  Tensor z = acos(edge);
  CHECK(z.item() == doctest::Approx(std::acos(1.0 - kAcosClamp)).epsilon(1e-12));
  backward(sum_all(z));
  CHECK(edge.grad()[0] == 0.0);

  Tensor s({2}, {2.0, -3.0});
  Tensor sc = mul(s, Tensor::scalar(4.0));
  CHECK(sc.values()[0] == 8.0);
  CHECK(sc.values()[1] == -12.0);
  CHECK_THROWS_AS(clamp(s, 1.0, 0.0), ConfigError);
}

TEST_CASE("reductions") {
  Tensor v({4}, {1, 2, 3, 4}, true);
  Tensor m = mean(v, {0});
  CHECK(m.item() == 2.5);
  backward(m);
  for (double g : v.grad()) CHECK(g == 0.25);

  Rng rng(9);
  Tensor a = random_tensor(rng, {2, 3, 4});
  CHECK(testing::bit_equal(sum(a, {}).values(), a.values()));
  Tensor s = sum(a, {0, 2});
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 4; ++k) acc += a.at({i, j, k});
    CHECK(s.values()[j] == doctest::Approx(acc).epsilon(1e-14));
  }
  CHECK_THROWS_AS(sum(a, {3}), ConfigError);
  CHECK_THROWS_AS(sum(a, {1, 1}), ConfigError);
}

TEST_CASE("layout round trips and gradients") {
  Rng rng(10);
  Tensor a = random_tensor(rng, {2, 3});
  CHECK(testing::bit_equal(reshape(reshape(a, {3, 2}), {2, 3}).values(), a.values()));
  CHECK_THROWS_AS(reshape(a, {4}), DimensionError);

  Tensor chw = random_tensor(rng, {3, 4, 5});
  Tensor hwc = permute(chw, {1, 2, 0});
  CHECK(hwc.shape() == Shape{4, 5, 3});
  CHECK(hwc.at({2, 3, 1}) == chw.at({1, 2, 3}));
  CHECK(testing::bit_equal(permute(hwc, {2, 0, 1}).values(), chw.values()));
  CHECK_THROWS_AS(permute(chw, {0, 0, 1}), ConfigError);

  Tensor leaf = random_tensor(rng, {3, 4, 5}, -1, 1, true);
  Tensor r = random_tensor(rng, {20, 3});
  auto f = [&] { return sum_all(mul(reshape(permute(leaf, {1, 2, 0}), {20, 3}), r)); };
  CHECK(fd_check(f, {leaf}, {.step = 1e-5}).max_rel_error <= 1e-8);

  Tensor c = concat({a, Tensor({2, 1}, {7, 8})}, 1);
  CHECK(c.at({1, 3}) == 8);
  CHECK(testing::bit_equal(slice(c, 1, 0, 3).values(), a.values()));
  CHECK_THROWS_AS(concat({a, Tensor({3, 1})}, 1), DimensionError);
}

TEST_CASE("backward semantics") {
  Tensor x({3}, {1, 2, 3}, true);
  backward(sum_all(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y({2}, {1, 2}, true);
  backward(sum_all(mul(y, y)));
  CHECK(y.grad()[0] == 2.0);
  CHECK(y.grad()[1] == 4.0);

  SUBCASE("fan-out accumulates both paths") {
    Rng rng(11);
    Tensor u = random_tensor(rng, {4}, -1, 1, true);
    auto f = [&] { return sum_all(mul(gelu(u), square(u))); };
    CHECK(fd_check(f, {u}, {.step = 1e-5}).max_rel_error <= 1e-8);
  }
  SUBCASE("detached tensors are constants") {
    Tensor p({2}, {3, 4}, true);
    Tensor loss = sum_all(mul(p, p.detach()));
    backward(loss);
    CHECK(p.grad()[0] == 3.0);
    CHECK(p.grad()[1] == 4.0);
  }
  SUBCASE("errors") {
    Tensor p({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(p, p)), UsageError);
    Tape::active().clear();
    CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), UsageError);
  }
  SUBCASE("no-grad guard records nothing") {
    Tape::active().clear();
    Tensor p({2}, {1, 2}, true);
    {
      NoGradGuard guard;
      Tensor q = mul(p, p);
      CHECK_FALSE(q.tape_node().has_value());
    }
    CHECK(Tape::active().size() == 0);
  }
}

TEST_CASE("tiny network gradient") {
  Rng rng(12);
  Tensor x = random_tensor(rng, {3, 6, 6});
  Tensor w1 = random_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5, true), b1 = random_tensor(rng, {4}, -0.5, 0.5, true);
  Tensor w2 = random_tensor(rng, {2, 4, 1, 1}, -0.5, 0.5, true);
  Tensor target = random_tensor(rng, {2, 6, 6});
  auto f = [&] {
    Tensor h = gelu(conv2d(x, w1, b1, 1));
    return mean_all(square(sub(conv2d(h, w2, Tensor(), 0), target)));
  };
  CHECK(fd_check(f, {w1, b1, w2}, {.step = 1e-4}).max_rel_error <= 1e-4);
}

TEST_CASE("fd_check examples") {
  Rng rng(13);
  Tensor x = random_tensor(rng, {7});
  CHECK(fd_check([](const Tensor& t) { return sum_all(t); }, x, 1e-5) <= 1e-10);
  CHECK(fd_check([](const Tensor& t) { return sum_all(square(t)); }, x, 1e-5) <= 1e-8);
  CHECK_THROWS_AS(fd_check([] { return Tensor::scalar(0); }, {}, {.step = 0.0}), ConfigError);
  // leaves are restored and keep their flags
  Tensor y = random_tensor(rng, {3});
  const std::vector<double> before(y.values().begin(), y.values().end());
  fd_check([&] { return sum_all(square(y)); }, {y});
  CHECK(testing::bit_equal(y.values(), before));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("rng is the documented generator") {
  // splitmix64 reference outputs for seed 0
  std::uint64_t s = 0;
  CHECK(splitmix64(s) == 0xE220A8397B1DCDAFULL);
  CHECK(splitmix64(s) == 0x6E789E6AA1B965F4ULL);
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng c(7);
  double lo = 1, hi = 0;
  for (int i = 0; i < 10000; ++i) {
    const double u = c.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  Rng d(9);
  double m = 0, v = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = d.normal();
    m += z;
    v += z * z;
  }
  m /= n;
  v = v / n - m * m;
  CHECK(std::abs(m) < 0.03);
  CHECK(std::abs(v - 1.0) < 0.05);
}
