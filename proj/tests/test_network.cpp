#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "hssdct/data.hpp"
#include "hssdct/error.hpp"
#include "hssdct/gradcheck.hpp"
#include "hssdct/gradsuite.hpp"
#include "hssdct/network.hpp"
#include "hssdct/ops.hpp"

using namespace hssdct;
using testing::random_tensor;

namespace {

// Hand tally of the layer formula sheet in docs/params.md.
std::size_t tally(std::size_t c, std::size_t bands, std::size_t msi, std::size_t blocks) {
  const std::size_t half = c / 2;
  const std::size_t norm = (c * c + c) + (2 * c * c + 2 * c);
  const std::size_t ssfe = (9 * half + half) + 2 * (half * half + half) + 2 * (c * c + c);
  const std::size_t ssfa = 2 * (c * c + c);
  const std::size_t sscl = norm + ssfe + ssfa;
  const std::size_t hdrtb = 3 * sscl + (3 * c * c + c);
  const std::size_t spe = 9 * bands * c + c + blocks * hdrtb;
  const std::size_t spa = 9 * msi * c + c + blocks * hdrtb;
  const std::size_t head = (9 * c * c + c) + (9 * c * bands + bands);
  return spe + spa + head;
}

}  // namespace

TEST_CASE("parameter counting") {
  ParamStore empty;
  CHECK(param_count(empty) == 0);

  ParamStore conv;
  ParamInit init(conv, 0);
  init.uniform("w", {3, 2, 1, 1}, 2);
  init.zeros("b", {3});
  CHECK(param_count(conv) == 9);

  Model desk(ModelConfig::desk());
  CHECK(param_count(desk) == 129264);
  CHECK(param_count(desk) == tally(32, 16, 4, 2));

  ModelConfig six = ModelConfig::desk();
  six.msi_bands = 6;
  CHECK(param_count(Model(six)) == tally(32, 16, 6, 2));
}

TEST_CASE("paper-scale configuration builds") {
  Model paper(ModelConfig::paper());
  CHECK(param_count(paper) == tally(64, 172, 4, 4));
  MESSAGE("paper-scale parameters: " << param_count(paper) << " (published figure 6.78M)");
}

TEST_CASE("window schedule inside a block") {
  CHECK(layer_windows(4) == std::array<std::size_t, 3>{4, 4, 4});
  CHECK(layer_windows(8) == std::array<std::size_t, 3>{4, 8, 8});
  CHECK(layer_windows(16) == std::array<std::size_t, 3>{4, 8, 16});
  CHECK(layer_windows(2) == std::array<std::size_t, 3>{2, 2, 2});
}

TEST_CASE("deterministic initialisation") {
  ModelConfig cfg = ModelConfig::desk();
  cfg.seed = 11;
  Model a(cfg), b(cfg);
  REQUIRE(a.params().size() == b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params().entries()[i].name == b.params().entries()[i].name);
    CHECK(testing::bit_equal(a.params().entries()[i].value.values(), b.params().entries()[i].value.values()));
  }
  cfg.seed = 12;
  Model c(cfg);
  CHECK_FALSE(testing::bit_equal(a.params().find("spe.shallow.weight")->value.values(),
                                 c.params().find("spe.shallow.weight")->value.values()));
}

TEST_CASE("forward shapes and identity at init") {
  Rng rng(1);
  for (std::size_t msi : {4u, 6u}) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.msi_bands = msi;
    Model model(cfg);
    Tensor lr = random_tensor(rng, {16, 8, 8}, 0, 1);
    Tensor hr = random_tensor(rng, {msi, 32, 32}, 0, 1);
    Tensor y = model.forward(lr, hr);
    CHECK(y.shape() == Shape{16, 32, 32});
    CHECK(testing::bit_equal(y.values(), bicubic_upsample(lr, 4).values()));
  }
}

TEST_CASE("forward determinism and branch ablation") {
  ModelConfig cfg = ModelConfig::desk();
  cfg.feat = 8;
  Model model(cfg);
  perturb_parameters(model.params(), 2, 0.05);
  Rng rng(3);
  Tensor lr = random_tensor(rng, {16, 4, 4}, 0, 1);
  Tensor hr = random_tensor(rng, {4, 16, 16}, 0, 1);
  NoGradGuard guard;
  ForwardTrace full = model.trace(lr, hr);
  CHECK(testing::bit_equal(full.output.values(), model.forward(lr, hr).values()));

  ForwardTrace ablated = model.trace(lr, hr, {.zero_spatial = true});
  CHECK(testing::bit_equal(ablated.spectral.values(), full.spectral.values()));
  CHECK(testing::max_abs(ablated.spatial.values()) == 0.0);
  Tensor expected = add(full.upsampled, model.head(full.spectral));
  CHECK(testing::bit_equal(ablated.output.values(), expected.values()));
  Tensor recomposed = add(full.upsampled, model.head(add(full.spectral, full.spatial)));
  CHECK(testing::bit_equal(full.output.values(), recomposed.values()));
  CHECK_FALSE(testing::bit_equal(full.output.values(), ablated.output.values()));
}

TEST_CASE("geometry and config errors") {
  Model model(ModelConfig::desk());
  Tensor lr({16, 8, 8}), hr({4, 32, 32});
  CHECK_THROWS_AS(model.forward(Tensor({16, 8, 7}), hr), DimensionError);
  CHECK_THROWS_AS(model.forward(lr, Tensor({3, 32, 32})), DimensionError);
  CHECK_THROWS_AS(model.forward(Tensor({15, 8, 8}), hr), DimensionError);
  CHECK_THROWS_AS(model.forward(lr, Tensor({4, 30, 32})), DimensionError);
  try {
    model.forward(Tensor({16, 8, 7}), hr);
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[16x8x8]") != std::string::npos);
    CHECK(msg.find("[16x8x7]") != std::string::npos);
  }

  auto expect_field = [](ModelConfig cfg, const std::string& field) {
    try {
      Model m(cfg);
      FAIL("config accepted");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  ModelConfig c = ModelConfig::desk();
  c.feat = 31;
  expect_field(c, "feat");
  c = ModelConfig::desk();
  c.block_windows = {4};
  expect_field(c, "block_windows");
  c = ModelConfig::desk();
  c.ratio = 0;
  expect_field(c, "ratio");
  c = ModelConfig::desk();
  c.hsi_bands = 0;
  expect_field(c, "hsi_bands");
}

TEST_CASE("model gradient on a sampled subset") {
  ModelConfig cfg = ModelConfig::desk();
  Model model(cfg);
  perturb_parameters(model.params(), 4, 0.1);
  Rng rng(5);
  Tensor lr = random_tensor(rng, {16, 4, 4}, 0, 1);
  Tensor hr = random_tensor(rng, {4, 16, 16}, 0, 1);
  Tensor r = random_tensor(rng, {16, 16, 16});
  auto f = [&] { return sum_all(mul(model.forward(lr, hr), r)); };
  auto res = fd_check(f, model.params().tensors(), {.step = 1e-4, .sample_fraction = 0.002, .seed = 6});
  CHECK(res.checked > 0);
  CHECK(res.max_rel_error <= 1e-4);
}
