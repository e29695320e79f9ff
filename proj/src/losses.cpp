#include "hssdct/losses.hpp"

#include <memory>

#include "hssdct/error.hpp"
#include "hssdct/ops.hpp"

namespace hssdct {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0)) throw ConfigError("loss lambda1 must be >= 0");
  if (!(lambda2 >= 0.0)) throw ConfigError("loss lambda2 must be >= 0");
}

namespace {

void require_pair(const Tensor& pred, const Tensor& target, const char* op) {
  if (pred.shape() != target.shape()) {
    throw DimensionError(std::string(op) + ": prediction " + shape_str(pred.shape()) +
                         " vs target " + shape_str(target.shape()));
  }
}

/// x[c, (i + dy) mod H, (j + dx) mod W]
Tensor roll(const Tensor& x, std::size_t dy, std::size_t dx) {
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  auto idx = std::make_shared<std::vector<std::size_t>>(c * h * w);
  for (std::size_t b = 0; b < c; ++b) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        (*idx)[(b * h + i) * w + j] = (b * h + (i + dy) % h) * w + (j + dx) % w;
      }
    }
  }
  return gather(x, std::move(idx), x.shape());
}

}  // namespace

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_pair(pred, target, "l1_loss");
  return mean_all(abs(sub(pred, target)));
}

Tensor sam_loss(const Tensor& pred, const Tensor& target) {
  require_pair(pred, target, "sam_loss");
  if (pred.ndim() < 1 || pred.extent(0) < 2) {
    throw DimensionError("sam_loss needs at least 2 bands, got " + shape_str(pred.shape()));
  }
  const std::size_t c = pred.extent(0);
  const Shape flat{c, pred.numel() / c};
  const Tensor p = reshape(pred, flat);
  const Tensor t = reshape(target, flat);
  const Tensor dot = sum(mul(p, t), {0});
  const Tensor norm_p = sqrt(sum(square(p), {0}));
  const Tensor norm_t = sqrt(sum(square(t), {0}));
  const Tensor cosine = div(dot, add_scalar(mul(norm_p, norm_t), kSamNormGuard));
  return mean_all(acos(cosine));
}

HaarSubbands haar_swt(const Tensor& cube) {
  if (cube.ndim() != 3) throw DimensionError("haar_swt expects [C,H,W], got " + shape_str(cube.shape()));
  const Tensor right = roll(cube, 0, 1);
  const Tensor down = roll(cube, 1, 0);
  const Tensor diag = roll(cube, 1, 1);
  const Tensor row_low = add(cube, right);    // low-pass along width (unnormalized)
  const Tensor row_high = sub(cube, right);
  const Tensor down_low = add(down, diag);
  const Tensor down_high = sub(down, diag);
  HaarSubbands s;
  s.ll = scale(add(row_low, down_low), 0.5);
  s.lh = scale(sub(row_low, down_low), 0.5);
  s.hl = scale(add(row_high, down_high), 0.5);
  s.hh = scale(sub(row_high, down_high), 0.5);
  return s;
}

Tensor swt_loss(const Tensor& pred, const Tensor& target) {
  require_pair(pred, target, "swt_loss");
  const auto bands = haar_swt(sub(pred, target));
  return add(add(mean_all(abs(bands.ll)), mean_all(abs(bands.lh))),
             add(mean_all(abs(bands.hl)), mean_all(abs(bands.hh))));
}

LossTerms loss_terms(const Tensor& pred, const Tensor& target, const LossWeights& weights) {
  weights.validate();
  LossTerms t;
  t.l1 = l1_loss(pred, target);
  t.sam = sam_loss(pred, target);
  t.swt = swt_loss(pred, target);
  t.total = add(add(t.l1, scale(t.sam, weights.lambda1)), scale(t.swt, weights.lambda2));
  return t;
}

Tensor total_loss(const Tensor& pred, const Tensor& target, const LossWeights& weights) {
  return loss_terms(pred, target, weights).total;
}

}  // namespace hssdct
