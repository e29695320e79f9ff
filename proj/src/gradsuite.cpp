#include "hssdct/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "hssdct/blocks.hpp"
#include "hssdct/losses.hpp"
#include "hssdct/network.hpp"
#include "hssdct/ops.hpp"
#include "hssdct/rng.hpp"

namespace hssdct {

void perturb_parameters(ParamStore& store, std::uint64_t seed, double amplitude) {
  Rng rng(seed);
  for (auto& e : store.entries()) {
    for (auto& x : e.value.mutable_values()) x += rng.uniform(-amplitude, amplitude);
  }
}

namespace {

class Suite {
 public:
  explicit Suite(const GradSuiteOptions& options) : rng_(options.seed) { opts_.step = options.step; }

  Tensor constant(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& x : t.mutable_values()) x = rng_.uniform(lo, hi);
    return t;
  }

  Tensor leaf(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t = constant(std::move(shape), lo, hi);
    t.set_requires_grad(true);
    return t;
  }

  /// Values with |x| in [lo, hi] and random sign.
  Tensor signed_leaf(Shape shape, double lo, double hi) {
    Tensor t = constant(std::move(shape), lo, hi);
    for (auto& x : t.mutable_values()) {
      if (rng_.uniform() < 0.5) x = -x;
    }
    t.set_requires_grad(true);
    return t;
  }

  /// Checks d/d(leaves) of sum(out() * R).
  void probe(const std::string& name, std::function<Tensor()> out, std::vector<Tensor> leaves,
             GradCheckOptions options) {
    auto weights = std::make_shared<Tensor>();
    auto f = [this, out, weights] {
      Tensor y = out();
      if (!weights->defined()) *weights = constant(y.shape());
      return sum_all(mul(y, *weights));
    };
    rows_.push_back({name, fd_check(f, std::move(leaves), options)});
  }
  void probe(const std::string& name, std::function<Tensor()> out, std::vector<Tensor> leaves) {
    probe(name, std::move(out), std::move(leaves), opts_);
  }

  void scalar(const std::string& name, std::function<Tensor()> f, std::vector<Tensor> leaves) {
    rows_.push_back({name, fd_check(f, std::move(leaves), opts_)});
  }

  std::vector<GradSuiteRow> take() { return std::move(rows_); }
  Rng& rng() { return rng_; }
  const GradCheckOptions& options() const { return opts_; }

 private:
  Rng rng_;
  GradCheckOptions opts_;
  std::vector<GradSuiteRow> rows_;
};

std::vector<Tensor> with(std::vector<Tensor> params, std::initializer_list<Tensor> extra) {
  params.insert(params.end(), extra.begin(), extra.end());
  return params;
}

void op_checks(Suite& s) {
  {
    Tensor a = s.leaf({3, 4}), b = s.leaf({4, 5});
    s.probe("matmul", [=] { return matmul(a, b); }, {a, b});
  }
  {
    Tensor a = s.leaf({2, 4, 3}), b = s.leaf({2, 5, 4});
    s.probe("matmul_batched_transposed", [=] { return matmul(a, b, true, true); }, {a, b});
  }
  {
    Tensor x = s.leaf({3, 5, 6}), k = s.leaf({4, 3, 3, 3}), b = s.leaf({4});
    s.probe("conv2d_3x3", [=] { return conv2d(x, k, b, 1); }, {x, k, b});
  }
  {
    Tensor x = s.leaf({2, 4, 6, 5}), k = s.leaf({2, 2, 5, 5});
    s.probe("conv2d_5x5_grouped_batched", [=] { return conv2d(x, k, Tensor(), 2, 2); }, {x, k});
  }
  {
    Tensor x = s.leaf({4, 4, 5}), k = s.leaf({3, 4, 1, 1}), b = s.leaf({3});
    s.probe("conv2d_1x1", [=] { return conv2d(x, k, b, 0); }, {x, k, b});
  }
  {
    Tensor x = s.leaf({3, 5, 4}), k = s.leaf({3, 1, 3, 3}), b = s.leaf({3});
    s.probe("conv2d_depthwise", [=] { return conv2d(x, k, b, 1, 3); }, {x, k, b});
  }
  {
    Tensor a = s.leaf({3, 4});
    s.probe("neg", [=] { return neg(a); }, {a});
    s.probe("square", [=] { return square(a); }, {a});
    s.probe("gelu", [=] { return gelu(a); }, {a});
    s.probe("scale", [=] { return scale(a, -1.7); }, {a});
    s.probe("add_scalar", [=] { return add_scalar(a, 0.3); }, {a});
  }
  {
    Tensor a = s.signed_leaf({3, 4}, 0.1, 1.0);
    s.probe("abs", [=] { return abs(a); }, {a});
  }
  {
    Tensor a = s.leaf({3, 4}, 0.2, 2.0);
    s.probe("sqrt", [=] { return sqrt(a); }, {a});
  }
  {
    Tensor a = s.leaf({3, 4}, -0.9, 0.9);
    s.probe("acos", [=] { return acos(a); }, {a});
  }
  {
    Tensor a = s.signed_leaf({3, 4}, 0.0, 0.4);
    Tensor b = s.signed_leaf({3, 4}, 0.6, 1.0);
    s.probe("clamp", [=] { return clamp(add(a, b), -0.5, 0.5); }, {a, b});
  }
  {
    Tensor a = s.leaf({2, 3}), b = s.leaf({2, 3}), c = s.leaf({1});
    Tensor d = s.signed_leaf({2, 3}, 0.5, 1.5);
    s.probe("add", [=] { return add(a, b); }, {a, b});
    s.probe("sub", [=] { return sub(a, b); }, {a, b});
    s.probe("mul", [=] { return mul(a, b); }, {a, b});
    s.probe("div", [=] { return div(a, d); }, {a, d});
    s.probe("mul_scalar_broadcast", [=] { return mul(a, c); }, {a, c});
  }
  {
    Tensor a = s.leaf({2, 3, 4});
    s.probe("sum_axes", [=] { return sum(a, {1}); }, {a});
    s.probe("mean_axes", [=] { return mean(a, {0, 2}); }, {a});
    s.scalar("sum_all", [=] { return sum_all(square(a)); }, {a});
    s.scalar("mean_all", [=] { return mean_all(square(a)); }, {a});
    s.probe("reshape", [=] { return reshape(a, {4, 6}); }, {a});
    s.probe("permute", [=] { return permute(a, {2, 0, 1}); }, {a});
    s.probe("transpose", [=] { return transpose(a); }, {a});
    s.probe("slice", [=] { return slice(a, 2, 1, 3); }, {a});
    auto idx = std::make_shared<std::vector<std::size_t>>();
    for (std::size_t i = 0; i < 30; ++i) idx->push_back(s.rng().below(a.numel()));
    s.probe("gather", [=] { return gather(a, idx, {5, 6}); }, {a});
  }
  {
    Tensor a = s.leaf({2, 3}), b = s.leaf({2, 2});
    s.probe("concat", [=] { return concat({a, b}, 1); }, {a, b});
  }
  {
    Tensor x = s.leaf({4, 3, 5}), g = s.leaf({4}), b = s.leaf({4});
    s.probe("normalize_channels", [=] { return normalize_channels(x, 1e-6); }, {x});
    s.probe("channel_affine", [=] { return channel_affine(x, g, b); }, {x, g, b});
  }
}

void block_checks(Suite& s) {
  constexpr double kAmp = 0.3;
  {
    Tensor x = s.leaf({2, 5, 7});
    s.probe("window_partition", [=] { return window_partition(x, 3).tiles; }, {x});
    const auto layout = make_window_layout({2, 5, 7}, 3);
    Tensor t = s.leaf({layout.count(), 2, 3, 3});
    s.probe("window_reverse", [=] { return window_reverse(t, layout); }, {t});
  }
  {
    ParamStore store;
    ParamInit init(store, 11);
    const auto p = make_ssfe_params(init, "ssfe", 6);
    perturb_parameters(store, 12, kAmp);
    Tensor x = s.leaf({3, 6, 4, 4});
    s.probe("ssfe_q", [=] { return ssfe(x, p).q; }, with(store.tensors(), {x}));
    s.probe("ssfe_v", [=] { return ssfe(x, p).v; }, with(store.tensors(), {x}));
  }
  {
    Tensor q = s.leaf({2, 9, 4}), v = s.leaf({2, 9, 4});
    s.probe("spa_sc", [=] { return spa_sc(q, v); }, {q, v});
    s.probe("spa_sc_naive", [=] { return spa_sc_naive(q, v); }, {q, v});
    s.probe("spa_sc_compressed", [=] { return spa_sc_compressed(q, v, 3); }, {q, v});
    s.probe("spe_sc", [=] { return spe_sc(q, v, 9); }, {q, v});
  }
  {
    ParamStore store;
    ParamInit init(store, 21);
    const auto p = make_ilayernorm_params(init, "norm", 4);
    perturb_parameters(store, 22, kAmp);
    Tensor x = s.leaf({4, 3, 5});
    s.probe("ilayernorm", [=] { return ilayernorm(x, p); }, with(store.tensors(), {x}));
  }
  {
    ParamStore store;
    ParamInit init(store, 31);
    const auto p = make_sscl_params(init, "sscl", 4, false);
    perturb_parameters(store, 32, kAmp);
    Tensor x = s.leaf({4, 6, 5});
    s.probe("sscl", [=] { return sscl_forward(x, p, 4); }, with(store.tensors(), {x}));
  }
  {
    ParamStore store;
    ParamInit init(store, 33);
    const auto p = make_sscl_params(init, "sscl", 4, true);
    perturb_parameters(store, 34, kAmp);
    Tensor x = s.leaf({4, 4, 4});
    s.probe("sscl_compressed", [=] { return sscl_forward(x, p, 4); }, with(store.tensors(), {x}));
  }
  {
    ParamStore store;
    ParamInit init(store, 41);
    const auto p = make_hdrtb_params(init, "hdrtb", 4, false);
    perturb_parameters(store, 42, kAmp);
    Tensor x = s.leaf({4, 6, 6});
    const std::array<std::size_t, 3> windows{2, 4, 6};
    s.probe("hdrtb", [=] { return hdrtb_forward(x, p, windows); }, with(store.tensors(), {x}));
  }
}

void loss_checks(Suite& s) {
  Tensor target = s.constant({3, 4, 4}, 0.0, 1.0);
  {
    // kinks of |.| kept well away from the evaluation point
    Tensor offset = s.signed_leaf({3, 4, 4}, 0.1, 0.5);
    s.scalar("l1_loss", [=] { return l1_loss(add(target, offset), target); }, {offset});
  }
  Tensor pred = s.leaf({3, 4, 4}, 0.0, 1.0);
  s.scalar("sam_loss", [=] { return sam_loss(pred, target); }, {pred});
  {
    // swt_loss is piecewise linear: resample until every subband entry of
    // pred - target is further than 10 h from its kink
    const double margin = 10.0 * s.options().step;
    Tensor p = s.leaf({3, 4, 4}, 0.0, 1.0);
    for (int attempt = 0; attempt < 1000; ++attempt) {
      NoGradGuard no_grad;
      const auto bands = haar_swt(sub(p, target));
      double nearest = INFINITY;
      for (const Tensor* b : {&bands.ll, &bands.lh, &bands.hl, &bands.hh}) {
        for (double x : b->values()) nearest = std::min(nearest, std::abs(x));
      }
      if (nearest > margin) break;
      p = s.leaf({3, 4, 4}, 0.0, 1.0);
    }
    s.scalar("swt_loss", [=] { return swt_loss(p, target); }, {p});
  }
  s.probe("haar_swt_hh", [=] { return haar_swt(pred).hh; }, {pred});
}

// Zero-initialised layers block gradient flow; much larger offsets make the
// un-normalised attention products blow up.
constexpr double kModelPerturbation = 0.1;

void model_check(Suite& s, const GradSuiteOptions& options) {
  Model model(ModelConfig::desk());
  perturb_parameters(model.params(), derive_seed(options.seed, 99), kModelPerturbation);
  const auto& cfg = model.config();
  Tensor lr = s.constant({cfg.hsi_bands, 4, 4}, 0.0, 1.0);
  Tensor msi = s.constant({cfg.msi_bands, 16, 16}, 0.0, 1.0);
  GradCheckOptions o = s.options();
  o.sample_fraction = options.model_fraction;
  o.seed = derive_seed(options.seed, 100);
  const Model* m = &model;
  s.probe("model_desk", [=] { return m->forward(lr, msi); }, model.params().tensors(), o);
}

}  // namespace

std::vector<GradSuiteRow> gradcheck_suite(const GradSuiteOptions& options) {
  Suite s(options);
  op_checks(s);
  block_checks(s);
  loss_checks(s);
  if (options.model_fraction > 0) model_check(s, options);
  return s.take();
}

}  // namespace hssdct
