#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "hssdct/tensor.hpp"

namespace hssdct {

// Linear algebra ------------------------------------------------------------

/// Matrix product of [M x K] and [K x N]. Rank-3 operands are treated as a
/// batch of matrices with equal leading extent.
Tensor matmul(const Tensor& a, const Tensor& b);

/// op(a) * op(b) where op transposes the trailing two axes when requested.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b);

/// Cross-correlation with reflect padding.
///
/// `input` is [C_in x H x W] or [B x C_in x H x W]; `kernel` is
/// [C_out x C_in/groups x k x k]; `bias` is empty or [C_out]. `pad` must be
/// (k-1)/2 so the spatial extent is preserved.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t pad,
              std::size_t groups = 1);

// Elementwise ---------------------------------------------------------------

enum class UnaryOp { Neg, Abs, Square, Sqrt, Gelu, Acos };
enum class BinaryOp { Add, Sub, Mul, Div };

/// Binary ops require equal shapes; `b` may also be a one-element tensor,
/// which is broadcast as a scalar.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(UnaryOp op, const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor gelu(const Tensor& a);
/// acos with its argument clamped to [-1 + 1e-7, 1 - 1e-7]; gradient is zero
/// where the clamp is active.
Tensor acos(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor clamp(const Tensor& a, double lo, double hi);

inline constexpr double kAcosClamp = 1e-7;

// Reductions ----------------------------------------------------------------

/// Reduces over `axes` (removed from the result). An empty list is the identity.
Tensor sum(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor mean(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Layout --------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape new_shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axis_order);
Tensor transpose(const Tensor& a);  // swaps the trailing two axes

/// out[i] = a.flat[indices[i]]; the backward rule scatter-adds.
Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> indices,
              Shape out_shape);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Reflect-101 boundary mapping of `x` into [0, n) (no edge repeat).
std::size_t reflect_index(long x, long n);

// Normalization helpers -----------------------------------------------------

/// Normalizes each position of a [C x ...] tensor across axis 0 to zero mean
/// and unit (epsilon-regularized, biased) variance.
Tensor normalize_channels(const Tensor& a, double epsilon);

/// y[c, p] = x[c, p] * gain[c] + shift[c] for x of shape [C x ...].
Tensor channel_affine(const Tensor& x, const Tensor& gain, const Tensor& shift);

}  // namespace hssdct
