#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hssdct/gradcheck.hpp"
#include "hssdct/param_store.hpp"

namespace hssdct {

struct GradSuiteRow {
  std::string name;
  GradCheckResult result;
};

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  double step = 1e-4;
  /// Fraction of desk-model parameters checked; <= 0 skips the model.
  double model_fraction = 0.01;
};

/// Adds U(-amplitude, amplitude) noise to every parameter so zero-initialised
/// layers pass gradient.
void perturb_parameters(ParamStore& store, std::uint64_t seed, double amplitude);

/// Finite-difference checks of every differentiable op, each block, the three
/// losses and the desk model (on a 16x16 scene). Each row checks the
/// gradient of sum(output * R) for a fixed random R unless noted.
std::vector<GradSuiteRow> gradcheck_suite(const GradSuiteOptions& options = {});

}  // namespace hssdct
