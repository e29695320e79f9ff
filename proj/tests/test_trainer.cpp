#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "helpers.hpp"
#include "hssdct/error.hpp"
#include "hssdct/trainer.hpp"

using namespace hssdct;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.hsi_bands = 8;
  c.msi_bands = 2;
  c.feat = 4;
  c.n_blocks = 1;
  c.block_windows = {4};
  c.ratio = 4;
  c.seed = 1;
  return c;
}

std::vector<SceneTriple> tiny_dataset(std::size_t n) {
  std::vector<SceneTriple> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(make_scene_triple(
        {.seed = 100 + i, .height = 8, .width = 8, .bands = 8, .msi_bands = 2, .ratio = 4}));
  }
  return out;
}

TrainConfig tiny_train(std::size_t steps) {
  TrainConfig t;
  t.lr_max = 1e-3;
  t.lr_min = 1e-5;
  t.total_steps = steps;
  t.batch_size = 2;
  t.seed = 7;
  return t;
}

bool same_history(const std::vector<HistoryRow>& a, const std::vector<HistoryRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step || std::memcmp(&a[i].loss, &b[i].loss, sizeof(double)) != 0 ||
        std::memcmp(&a[i].lr, &b[i].lr, sizeof(double)) != 0)
      return false;
  }
  return true;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || !testing::bit_equal(x.value.values(), y.value.values()) ||
        !testing::bit_equal(x.adam_m, y.adam_m) || !testing::bit_equal(x.adam_v, y.adam_v))
      return false;
  }
  return a.step == b.step;
}

}  // namespace

TEST_CASE("cosine schedule") {
  TrainConfig c;
  c.lr_max = 1e-4;
  c.lr_min = 1e-6;
  c.total_steps = 600;
  CHECK(cosine_lr(0, c) == 1e-4);
  CHECK(cosine_lr(600, c) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(cosine_lr(300, c) == doctest::Approx((1e-4 + 1e-6) / 2).epsilon(1e-12));
  for (std::size_t s = 1; s <= 600; ++s) CHECK(cosine_lr(s, c) <= cosine_lr(s - 1, c));
  CHECK_THROWS_AS(cosine_lr(601, c), UsageError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr_min = 2e-4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.total_steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  TrainConfig p = TrainConfig::paper_scale(10);
  CHECK(p.batch_size == 4);
  CHECK(p.total_steps == 600 * 3);
  CHECK(p.lr_max == 1e-4);
}

TEST_CASE("adam closed-form first step and zero gradient") {
  ParamStore store;
  Tensor p = store.add("p", Tensor({4}, {0.5, -0.5, 1.0, 2.0}));
  const std::vector<double> g{0.3, -2.0, 0.0, 1e-3};
  const std::vector<double> before(p.values().begin(), p.values().end());
  const std::span<const double> gs[] = {g};
  TrainConfig c;
  adam_step(store, gs, 0.01, c);
  CHECK(store.step == 1);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = before[i] - 0.01 * g[i] / (std::abs(g[i]) + c.eps);
    CHECK(p.values()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(p.values()[2] == before[2]);

  ParamStore still;
  Tensor q = still.add("q", Tensor({3}, {1, 2, 3}));
  const std::vector<double> zeros(3, 0.0);
  const std::span<const double> zs[] = {zeros};
  for (int i = 0; i < 5; ++i) adam_step(still, zs, 0.1, c);
  CHECK(q.values()[0] == 1.0);
  CHECK(q.values()[1] == 2.0);
  CHECK(q.values()[2] == 3.0);
}

TEST_CASE("adam on a quadratic matches a scalar reference") {
  ParamStore store;
  Tensor theta = store.add("theta", Tensor({1}, std::vector<double>{1.0}));
  TrainConfig c;
  double ref = 1.0, m = 0.0, v = 0.0;
  double prev = 1.0;
  for (int t = 1; t <= 10; ++t) {
    const double g = 2.0 * theta.values()[0];
    const std::vector<double> grad{g};
    const std::span<const double> gs[] = {grad};
    adam_step(store, gs, 0.1, c);

    const double gr = 2.0 * ref;
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);

    CHECK(std::abs(theta.values()[0] - ref) <= 1e-12);
    CHECK(std::abs(theta.values()[0]) < std::abs(prev));
    prev = theta.values()[0];
  }
}

TEST_CASE("adam error paths") {
  ParamStore store;
  store.add("weights", Tensor({2}, {1, 2}));
  TrainConfig c;
  try {
    adam_step(store, 0.1, c);
    FAIL("missing gradient accepted");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("weights") != std::string::npos);
  }
  const std::vector<double> wrong(3, 1.0);
  const std::span<const double> gs[] = {wrong};
  CHECK_THROWS_AS(adam_step(store, gs, 0.1, c), UsageError);
}

TEST_CASE("sample order visits every scene once per epoch") {
  for (std::size_t n : {1u, 3u, 5u}) {
    for (std::size_t epoch = 0; epoch < 4; ++epoch) {
      std::set<std::size_t> seen;
      for (std::size_t s = 0; s < n; ++s) seen.insert(sample_index(9, epoch * n + s, n));
      CHECK(seen.size() == n);
      CHECK(*seen.rbegin() == n - 1);
    }
  }
  CHECK(sample_index(9, 17, 5) == sample_index(9, 17, 5));
}

TEST_CASE("training is deterministic and lr 0 leaves parameters untouched") {
  const auto data = tiny_dataset(3);
  Model a(tiny_model()), b(tiny_model());
  const auto ha = train(a, data, tiny_train(6));
  const auto hb = train(b, data, tiny_train(6));
  CHECK(ha.size() == 6);
  CHECK(same_history(ha, hb));
  CHECK(same_params(a.params(), b.params()));
  CHECK(ha.front().lr == 1e-3);

  Model frozen(tiny_model()), fresh(tiny_model());
  TrainConfig zero = tiny_train(4);
  zero.lr_max = 0.0;
  zero.lr_min = 0.0;
  train(frozen, data, zero);
  for (std::size_t i = 0; i < frozen.params().size(); ++i)
    CHECK(testing::bit_equal(frozen.params().entries()[i].value.values(),
                             fresh.params().entries()[i].value.values()));
}

TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run") {
  const auto data = tiny_dataset(3);
  const TrainConfig cfg = tiny_train(100);
  Model straight(tiny_model());
  const auto full = train(straight, data, cfg);

  Model first(tiny_model());
  auto head = train(first, data, cfg, {.stop_at = 50, .on_step = {}});
  CHECK(head.size() == 50);
  const auto bytes = encode_checkpoint(snapshot(first.params(), "meta"));

  Model second(tiny_model());
  restore(second.params(), decode_checkpoint(bytes));
  CHECK(second.params().step == 50);
  auto tail = train(second, data, cfg);
  head.insert(head.end(), tail.begin(), tail.end());
  CHECK(same_history(head, full));
  CHECK(same_params(second.params(), straight.params()));
}

TEST_CASE("checkpoint files") {
  const fs::path dir = fs::temp_directory_path() / ("hssdct_test_ckpt_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto data = tiny_dataset(2);
  Model trained(tiny_model());
  train(trained, data, tiny_train(3));
  save_checkpoint(dir / "a.hck", trained.params(), "{\"note\":1}");

  Model loaded(tiny_model());
  CHECK(load_checkpoint(dir / "a.hck", loaded.params()) == "{\"note\":1}");
  CHECK(same_params(loaded.params(), trained.params()));
  const Checkpoint ck = read_checkpoint(dir / "a.hck");
  CHECK(ck.blobs.size() == 3 * trained.params().size());
  CHECK(ck.blobs.front().name.rfind("param/", 0) == 0);
  CHECK(encode_checkpoint(ck) == encode_checkpoint(snapshot(trained.params(), "{\"note\":1}")));

  SUBCASE("mismatched model leaves the store untouched") {
    ModelConfig other = tiny_model();
    other.feat = 6;
    Model wrong(other);
    const Checkpoint before = snapshot(wrong.params());
    CHECK_THROWS_AS(load_checkpoint(dir / "a.hck", wrong.params()), CheckpointError);
    CHECK(encode_checkpoint(snapshot(wrong.params())) == encode_checkpoint(before));

    Checkpoint bent = ck;
    bent.blobs.back().shape.push_back(1);
    Model target(tiny_model());
    const auto untouched = encode_checkpoint(snapshot(target.params()));
    CHECK_THROWS_AS(restore(target.params(), bent), CheckpointError);
    CHECK(encode_checkpoint(snapshot(target.params())) == untouched);

    Checkpoint renamed = ck;
    renamed.blobs[1].name = "param/nothing";
    CHECK_THROWS_AS(restore(target.params(), renamed), CheckpointError);
    Checkpoint shorter = ck;
    shorter.blobs.pop_back();
    CHECK_THROWS_AS(restore(target.params(), shorter), CheckpointError);
  }
  SUBCASE("corrupt bytes are format errors") {
    auto bytes = encode_checkpoint(ck);
    auto bad = bytes;
    bad[0] = 'Z';
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(bytes.size() - 3)), FormatError);
    auto longer = bytes;
    longer.push_back(7);
    CHECK_THROWS_AS(decode_checkpoint(longer), FormatError);
    CHECK_THROWS_AS(read_checkpoint(dir / "absent.hck"), IoError);
  }
  fs::remove_all(dir);
}

TEST_CASE("non-finite loss aborts training") {
  auto data = tiny_dataset(2);
  for (auto& s : data) s.hr_hsi.mutable_values()[3] = std::nan("");
  Model m(tiny_model());
  try {
    train(m, data, tiny_train(5));
    FAIL("training continued");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("history csv") {
  const fs::path path = fs::temp_directory_path() / ("hssdct_hist_" + std::to_string(::getpid()) + ".csv");
  std::vector<HistoryRow> rows{{0, 0.5, 0.4, 0.1, 0.2, 1e-4}, {1, 0.25, 0.2, 0.05, 0.1, 5e-5}};
  write_history_csv(path, rows);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "step,loss,l1,sam,swt,lr");
  CHECK(first.rfind("0,0.5,", 0) == 0);
  fs::remove(path);
}
