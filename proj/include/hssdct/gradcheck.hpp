#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hssdct/tensor.hpp"

namespace hssdct {

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over the
/// checked coordinates, plus where it occurred.
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares tape gradients of `f(x)` against central differences
/// (f(x+he) - f(x-he)) / 2h at every coordinate of `x`.
double fd_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step);

struct GradCheckOptions {
  double step = 1e-5;
  /// Fraction of coordinates to check (1.0 = all); sampled with `seed`.
  double sample_fraction = 1.0;
  std::uint64_t seed = 0;
};

/// Gradient check of a closure over several leaves. `f` must rebuild its
/// graph on every call; leaves are perturbed in place and restored.
GradCheckResult fd_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                         const GradCheckOptions& options = {});

}  // namespace hssdct
