#include "hssdct/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hssdct/error.hpp"
#include "hssdct/rng.hpp"

namespace hssdct {

double fd_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
  Tensor leaf = x;
  return fd_check([&] { return f(leaf); }, {leaf}, GradCheckOptions{step, 1.0, 0}).max_rel_error;
}

GradCheckResult fd_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                         const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ConfigError("fd_check: step must be positive");
  std::vector<bool> previous(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    previous[i] = leaves[i].requires_grad();
    leaves[i].set_requires_grad(true);
    leaves[i].zero_grad();
  }
  Tape::active().clear();
  Tensor loss = f();
  backward(loss);

  GradCheckResult result;
  Rng rng(options.seed);
  const double h = options.step;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto values = leaf.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (options.sample_fraction < 1.0 && rng.uniform() >= options.sample_fraction) continue;
      const double saved = values[i];
      double fp = 0.0, fm = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        fp = f().item();
        values[i] = saved - h;
        fm = f().item();
      }
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        if (rel >= result.max_rel_error) {
          result.worst_leaf = li;
          result.worst_index = i;
          result.worst_analytic = analytic[i];
          result.worst_numeric = numeric;
        }
      }
    }
  }
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    leaves[i].zero_grad();
    leaves[i].set_requires_grad(previous[i]);
  }
  return result;
}

}  // namespace hssdct
