#pragma once

#include "hssdct/tensor.hpp"

namespace hssdct {

struct LossWeights {
  double lambda1 = 0.01;  // SAM
  double lambda2 = 0.01;  // SWT
  void validate() const;
};

inline constexpr double kSamNormGuard = 1e-8;

/// Mean absolute difference.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

/// Mean per-pixel spectral angle in radians for [C x H x W] cubes:
/// acos(<p,t> / (|p||t| + 1e-8)) with the cosine clamped to +-(1 - 1e-7).
Tensor sam_loss(const Tensor& pred, const Tensor& target);

/// Level-1 undecimated Haar subbands of a [C x H x W] cube with periodic
/// boundary. LL of a constant c is 2c; the other bands vanish.
struct HaarSubbands {
  Tensor ll, lh, hl, hh;
};
HaarSubbands haar_swt(const Tensor& cube);

/// Sum over the four subbands of the mean absolute subband difference.
Tensor swt_loss(const Tensor& pred, const Tensor& target);

struct LossTerms {
  Tensor total;
  Tensor l1;
  Tensor sam;
  Tensor swt;
};

/// l1 + lambda1 * sam + lambda2 * swt, with the components kept.
LossTerms loss_terms(const Tensor& pred, const Tensor& target, const LossWeights& weights);
Tensor total_loss(const Tensor& pred, const Tensor& target, const LossWeights& weights);

}  // namespace hssdct
