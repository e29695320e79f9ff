#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>

#include "hssdct/param_store.hpp"
#include "hssdct/tensor.hpp"

namespace hssdct {

inline constexpr double kLayerNormEpsilon = 1e-6;
inline constexpr double kDenseResidueScale = 0.2;

// ---------------------------------------------------------------------------
// Windows

/// Geometry of a reflect-padded, non-overlapping window tiling.
struct WindowLayout {
  std::size_t window_side = 0;
  std::size_t rows = 0;  // windows down
  std::size_t cols = 0;  // windows across
  std::size_t pad_bottom = 0;
  std::size_t pad_right = 0;
  std::size_t channels = 0;
  std::size_t height = 0;  // unpadded
  std::size_t width = 0;

  std::size_t count() const noexcept { return rows * cols; }
  std::size_t tokens() const noexcept { return window_side * window_side; }
};

struct WindowTiles {
  Tensor tiles;  // [n_win x C x w x w], window index = row * cols + col
  WindowLayout layout;
};

WindowLayout make_window_layout(const Shape& feature_shape, std::size_t window_side);
WindowTiles window_partition(const Tensor& features, std::size_t window_side);
/// Inverse of window_partition: crops the padding and restores [C x H x W].
Tensor window_reverse(const Tensor& tiles, const WindowLayout& layout);

// ---------------------------------------------------------------------------
// Parameters

/// Adaptive layer norm: (1 + gamma) * normalize(x) + beta, with (gamma, beta)
/// predicted by Linear(C,C) -> GELU -> Linear(C,2C) from the pooled input.
struct ILayerNormParams {
  Tensor mlp1_w;  // [C x C]
  Tensor mlp1_b;  // [1 x C]
  Tensor mlp2_w;  // [C x 2C], zero at init
  Tensor mlp2_b;  // [1 x 2C], zero at init
};

/// Channel-split projection producing Q and V. The first half of the channels
/// goes through depthwise 3x3 then pointwise 1x1, the second half through a
/// pointwise 1x1 only.
struct SsfeParams {
  Tensor dw_w;  // [C/2 x 1 x 3 x 3]
  Tensor dw_b;  // [C/2]
  Tensor spatial_pw_w;  // [C/2 x C/2 x 1 x 1]
  Tensor spatial_pw_b;
  Tensor spectral_pw_w;  // [C/2 x C/2 x 1 x 1]
  Tensor spectral_pw_b;
  Tensor q_w;  // [C x C x 1 x 1]
  Tensor q_b;
  Tensor v_w;
  Tensor v_b;
};

/// 1x1 -> GELU -> 1x1, second projection zero at init.
struct SsfaParams {
  Tensor fc1_w;
  Tensor fc1_b;
  Tensor fc2_w;
  Tensor fc2_b;
};

struct SsclParams {
  ILayerNormParams norm;
  SsfeParams ssfe;
  SsfaParams ssfa;
  /// Average-pool V to ceil(w/2)^2 tokens before the spatial correlation.
  bool compress_values = false;
};

struct HdrtbParams {
  std::array<SsclParams, 3> layers;
  Tensor fuse_w;  // [C x 3C x 1 x 1], zero at init
  Tensor fuse_b;  // [C]
  double gamma = kDenseResidueScale;
};

ILayerNormParams make_ilayernorm_params(ParamInit& init, const std::string& prefix,
                                        std::size_t channels);
SsfeParams make_ssfe_params(ParamInit& init, const std::string& prefix, std::size_t channels);
SsfaParams make_ssfa_params(ParamInit& init, const std::string& prefix, std::size_t channels);
SsclParams make_sscl_params(ParamInit& init, const std::string& prefix, std::size_t channels,
                            bool compress_values = false);
HdrtbParams make_hdrtb_params(ParamInit& init, const std::string& prefix, std::size_t channels,
                              bool compress_values = false);

// ---------------------------------------------------------------------------
// Operations

struct QueryValue {
  Tensor q;  // [N x C] or [B x N x C]
  Tensor v;
};

/// `windows` is [C x w x w] (result rank 2) or [B x C x w x w] (result rank 3).
QueryValue ssfe(const Tensor& windows, const SsfeParams& params);

/// Spatial self-correlation (Q V^T / sqrt(d)) V, evaluated as Q (V^T V) / sqrt(d).
Tensor spa_sc(const Tensor& q, const Tensor& v);
/// Same quantity in left-to-right order; O(N^2 d).
Tensor spa_sc_naive(const Tensor& q, const Tensor& v);
/// Q (Vc^T Vc) / sqrt(d) where Vc averages V over 2x2 cells of the w x w token grid.
Tensor spa_sc_compressed(const Tensor& q, const Tensor& v, std::size_t window_side);
/// Averages token rows of [N x d] / [B x N x d] (N = side^2) over 2x2 cells.
Tensor pool_tokens(const Tensor& v, std::size_t window_side);

/// Spectral self-correlation ((Q^T V / n_tokens) V^T)^T, token-major [N x d].
Tensor spe_sc(const Tensor& q, const Tensor& v, std::size_t n_tokens);

Tensor ilayernorm(const Tensor& features, const ILayerNormParams& params);
Tensor sscl_forward(const Tensor& features, const SsclParams& params, std::size_t window_side);
Tensor hdrtb_forward(const Tensor& features, const HdrtbParams& params,
                     std::span<const std::size_t> window_schedule);

}  // namespace hssdct
