#include "hssdct/blocks.hpp"

#include <cmath>
#include <memory>

#include "hssdct/error.hpp"
#include "hssdct/ops.hpp"

namespace hssdct {

// ---------------------------------------------------------------------------
// windows

WindowLayout make_window_layout(const Shape& feature_shape, std::size_t window_side) {
  if (window_side == 0) throw ConfigError("window side must be >= 1");
  if (feature_shape.size() != 3) {
    throw DimensionError("window partition expects [C,H,W], got " + shape_str(feature_shape));
  }
  WindowLayout l;
  l.window_side = window_side;
  l.channels = feature_shape[0];
  l.height = feature_shape[1];
  l.width = feature_shape[2];
  l.rows = (l.height + window_side - 1) / window_side;
  l.cols = (l.width + window_side - 1) / window_side;
  l.pad_bottom = l.rows * window_side - l.height;
  l.pad_right = l.cols * window_side - l.width;
  return l;
}

WindowTiles window_partition(const Tensor& features, std::size_t window_side) {
  const auto layout = make_window_layout(features.shape(), window_side);
  const std::size_t w = window_side;
  const std::size_t c = layout.channels, h = layout.height, wd = layout.width;
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(layout.count() * c * w * w);
  for (std::size_t r = 0; r < layout.rows; ++r) {
    for (std::size_t q = 0; q < layout.cols; ++q) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < w; ++y) {
          const std::size_t sy = reflect_index(static_cast<long>(r * w + y), static_cast<long>(h));
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx =
                reflect_index(static_cast<long>(q * w + x), static_cast<long>(wd));
            idx->push_back((ch * h + sy) * wd + sx);
          }
        }
      }
    }
  }
  Tensor tiles = gather(features, std::move(idx), Shape{layout.count(), c, w, w});
  return WindowTiles{std::move(tiles), layout};
}

Tensor window_reverse(const Tensor& tiles, const WindowLayout& layout) {
  const std::size_t w = layout.window_side;
  const Shape expected{layout.count(), layout.channels, w, w};
  if (tiles.shape() != expected) {
    throw DimensionError("window_reverse: tiles " + shape_str(tiles.shape()) + ", layout expects " +
                         shape_str(expected));
  }
  const std::size_t c = layout.channels, h = layout.height, wd = layout.width;
  auto idx = std::make_shared<std::vector<std::size_t>>(c * h * wd);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < wd; ++x) {
        const std::size_t win = (y / w) * layout.cols + x / w;
        (*idx)[(ch * h + y) * wd + x] = ((win * c + ch) * w + y % w) * w + x % w;
      }
    }
  }
  return gather(tiles, std::move(idx), Shape{c, h, wd});
}

// ---------------------------------------------------------------------------
// parameters

ILayerNormParams make_ilayernorm_params(ParamInit& init, const std::string& prefix,
                                        std::size_t channels) {
  const std::size_t c = channels;
  ILayerNormParams p;
  p.mlp1_w = init.uniform(prefix + ".mlp1.weight", {c, c}, c);
  p.mlp1_b = init.zeros(prefix + ".mlp1.bias", {1, c});
  p.mlp2_w = init.zeros(prefix + ".mlp2.weight", {c, 2 * c});
  p.mlp2_b = init.zeros(prefix + ".mlp2.bias", {1, 2 * c});
  return p;
}

SsfeParams make_ssfe_params(ParamInit& init, const std::string& prefix, std::size_t channels) {
  if (channels < 2 || channels % 2 != 0) {
    throw ConfigError("SSFE channel split needs an even channel count, got " +
                      std::to_string(channels));
  }
  const std::size_t c = channels, h = channels / 2;
  SsfeParams p;
  p.dw_w = init.uniform(prefix + ".dw.weight", {h, 1, 3, 3}, 9);
  p.dw_b = init.zeros(prefix + ".dw.bias", {h});
  p.spatial_pw_w = init.uniform(prefix + ".spatial_pw.weight", {h, h, 1, 1}, h);
  p.spatial_pw_b = init.zeros(prefix + ".spatial_pw.bias", {h});
  p.spectral_pw_w = init.uniform(prefix + ".spectral_pw.weight", {h, h, 1, 1}, h);
  p.spectral_pw_b = init.zeros(prefix + ".spectral_pw.bias", {h});
  p.q_w = init.uniform(prefix + ".q.weight", {c, c, 1, 1}, c);
  p.q_b = init.zeros(prefix + ".q.bias", {c});
  p.v_w = init.uniform(prefix + ".v.weight", {c, c, 1, 1}, c);
  p.v_b = init.zeros(prefix + ".v.bias", {c});
  return p;
}

SsfaParams make_ssfa_params(ParamInit& init, const std::string& prefix, std::size_t channels) {
  const std::size_t c = channels;
  SsfaParams p;
  p.fc1_w = init.uniform(prefix + ".fc1.weight", {c, c, 1, 1}, c);
  p.fc1_b = init.zeros(prefix + ".fc1.bias", {c});
  p.fc2_w = init.zeros(prefix + ".fc2.weight", {c, c, 1, 1});
  p.fc2_b = init.zeros(prefix + ".fc2.bias", {c});
  return p;
}

SsclParams make_sscl_params(ParamInit& init, const std::string& prefix, std::size_t channels,
                            bool compress_values) {
  SsclParams p;
  p.norm = make_ilayernorm_params(init, prefix + ".norm", channels);
  p.ssfe = make_ssfe_params(init, prefix + ".ssfe", channels);
  p.ssfa = make_ssfa_params(init, prefix + ".ssfa", channels);
  p.compress_values = compress_values;
  return p;
}

HdrtbParams make_hdrtb_params(ParamInit& init, const std::string& prefix, std::size_t channels,
                              bool compress_values) {
  HdrtbParams p;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    p.layers[i] = make_sscl_params(init, prefix + ".layer" + std::to_string(i), channels,
                                   compress_values);
  }
  p.fuse_w = init.zeros(prefix + ".fuse.weight", {channels, 3 * channels, 1, 1});
  p.fuse_b = init.zeros(prefix + ".fuse.bias", {channels});
  return p;
}

// ---------------------------------------------------------------------------
// SSFE and the two correlations

namespace {

/// [B x C x w x w] -> [B x N x C]
Tensor to_tokens(const Tensor& maps) {
  const auto& s = maps.shape();
  return permute(reshape(maps, {s[0], s[1], s[2] * s[3]}), {0, 2, 1});
}

/// [B x N x C] -> [B x C x w x w]
Tensor from_tokens(const Tensor& tokens, std::size_t side) {
  const auto& s = tokens.shape();
  return reshape(permute(tokens, {0, 2, 1}), {s[0], s[2], side, side});
}

void require_qv(const Tensor& q, const Tensor& v, const char* op) {
  if (q.shape() != v.shape() || (q.ndim() != 2 && q.ndim() != 3)) {
    throw DimensionError(std::string(op) + ": Q " + shape_str(q.shape()) + " and V " +
                         shape_str(v.shape()) + " must be equal [N,d] or [B,N,d]");
  }
  if (q.shape().back() == 0) throw DimensionError(std::string(op) + ": d must be >= 1");
}

}  // namespace

QueryValue ssfe(const Tensor& windows, const SsfeParams& params) {
  const bool single = windows.ndim() == 3;
  if (!single && windows.ndim() != 4) {
    throw DimensionError("ssfe expects [C,w,w] or [B,C,w,w], got " + shape_str(windows.shape()));
  }
  Tensor x = single ? reshape(windows, {1, windows.extent(0), windows.extent(1), windows.extent(2)})
                    : windows;
  const std::size_t c = x.extent(1);
  if (c % 2 != 0) throw ConfigError("ssfe: odd channel count " + std::to_string(c));
  const std::size_t h = c / 2;
  Tensor spatial = slice(x, 1, 0, h);
  spatial = conv2d(spatial, params.dw_w, params.dw_b, 1, h);
  spatial = conv2d(spatial, params.spatial_pw_w, params.spatial_pw_b, 0);
  Tensor spectral = conv2d(slice(x, 1, h, c), params.spectral_pw_w, params.spectral_pw_b, 0);
  Tensor trunk = concat({spatial, spectral}, 1);
  Tensor q = to_tokens(conv2d(trunk, params.q_w, params.q_b, 0));
  Tensor v = to_tokens(conv2d(trunk, params.v_w, params.v_b, 0));
  if (single) {
    q = reshape(q, {q.extent(1), q.extent(2)});
    v = reshape(v, {v.extent(1), v.extent(2)});
  }
  return {q, v};
}

Tensor spa_sc(const Tensor& q, const Tensor& v) {
  require_qv(q, v, "spa_sc");
  const double d = static_cast<double>(q.shape().back());
  Tensor gram = matmul(v, v, true, false);  // [d x d]
  return scale(matmul(q, gram), 1.0 / std::sqrt(d));
}

Tensor spa_sc_naive(const Tensor& q, const Tensor& v) {
  require_qv(q, v, "spa_sc_naive");
  const double d = static_cast<double>(q.shape().back());
  Tensor affinity = scale(matmul(q, v, false, true), 1.0 / std::sqrt(d));  // [N x N]
  return matmul(affinity, v);
}

Tensor pool_tokens(const Tensor& v, std::size_t window_side) {
  const bool single = v.ndim() == 2;
  const std::size_t w = window_side;
  const std::size_t n = w * w;
  if ((v.ndim() != 2 && v.ndim() != 3) || v.shape()[v.ndim() - 2] != n) {
    throw DimensionError("pool_tokens: " + shape_str(v.shape()) + " is not a " +
                         std::to_string(w) + "x" + std::to_string(w) + " token grid");
  }
  const std::size_t batch = single ? 1 : v.extent(0);
  const std::size_t d = v.shape().back();
  const std::size_t side = (w + 1) / 2;
  const std::size_t m = side * side;
  // cell membership: token t belongs to cell cell_of[t]; each cell averages its members
  auto cell_of = std::make_shared<std::vector<std::size_t>>(n);
  auto weight = std::make_shared<std::vector<double>>(m, 0.0);
  for (std::size_t y = 0; y < w; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t cell = (y / 2) * side + x / 2;
      (*cell_of)[y * w + x] = cell;
      (*weight)[cell] += 1.0;
    }
  }
  for (auto& wt : *weight) wt = 1.0 / wt;
  const auto vv = v.values();
  std::vector<double> out(batch * m * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t cell = (*cell_of)[t];
      const double wt = (*weight)[cell];
      for (std::size_t j = 0; j < d; ++j) {
        out[(b * m + cell) * d + j] += wt * vv[(b * n + t) * d + j];
      }
    }
  }
  Shape out_shape = single ? Shape{m, d} : Shape{batch, m, d};
  return make_result(std::move(out_shape), std::move(out), {v},
                     [v, cell_of, weight, batch, n, m, d](std::span<const double> g) mutable {
                       auto dv = v.grad_sink();
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t t = 0; t < n; ++t) {
                           const std::size_t cell = (*cell_of)[t];
                           const double wt = (*weight)[cell];
                           for (std::size_t j = 0; j < d; ++j) {
                             dv[(b * n + t) * d + j] += wt * g[(b * m + cell) * d + j];
                           }
                         }
                       }
                     });
}

Tensor spa_sc_compressed(const Tensor& q, const Tensor& v, std::size_t window_side) {
  require_qv(q, v, "spa_sc_compressed");
  const double d = static_cast<double>(q.shape().back());
  Tensor pooled = pool_tokens(v, window_side);
  Tensor gram = matmul(pooled, pooled, true, false);
  return scale(matmul(q, gram), 1.0 / std::sqrt(d));
}

Tensor spe_sc(const Tensor& q, const Tensor& v, std::size_t n_tokens) {
  require_qv(q, v, "spe_sc");
  if (n_tokens == 0) throw DimensionError("spe_sc: token count must be >= 1");
  Tensor affinity = scale(matmul(q, v, true, false), 1.0 / static_cast<double>(n_tokens));
  Tensor channel_major = matmul(affinity, v, false, true);  // [d x N]
  return transpose(channel_major);
}

// ---------------------------------------------------------------------------
// iLayerNorm, SSCL, HDRTB

Tensor ilayernorm(const Tensor& features, const ILayerNormParams& params) {
  if (features.ndim() != 3 || features.extent(1) * features.extent(2) == 0) {
    throw DimensionError("ilayernorm expects non-empty [C,H,W], got " +
                         shape_str(features.shape()));
  }
  const std::size_t c = features.extent(0);
  Tensor normalized = normalize_channels(features, kLayerNormEpsilon);
  Tensor pooled = reshape(mean(features, {1, 2}), {1, c});
  Tensor hidden = gelu(add(matmul(pooled, params.mlp1_w), params.mlp1_b));
  Tensor modulation = add(matmul(hidden, params.mlp2_w), params.mlp2_b);  // [1 x 2C]
  Tensor gain = add_scalar(slice(modulation, 1, 0, c), 1.0);
  Tensor shift = slice(modulation, 1, c, 2 * c);
  return channel_affine(normalized, gain, shift);
}

Tensor sscl_forward(const Tensor& features, const SsclParams& params, std::size_t window_side) {
  if (features.ndim() != 3) {
    throw DimensionError("sscl expects [C,H,W], got " + shape_str(features.shape()));
  }
  Tensor normed = ilayernorm(features, params.norm);
  auto [tiles, layout] = window_partition(normed, window_side);
  auto [q, v] = ssfe(tiles, params.ssfe);
  const std::size_t n = layout.tokens();
  Tensor spatial = params.compress_values ? spa_sc_compressed(q, v, window_side) : spa_sc(q, v);
  Tensor mixed = add(spatial, spe_sc(q, v, n));
  Tensor maps = from_tokens(mixed, window_side);
  maps = conv2d(maps, params.ssfa.fc1_w, params.ssfa.fc1_b, 0);
  maps = conv2d(gelu(maps), params.ssfa.fc2_w, params.ssfa.fc2_b, 0);
  return add(features, window_reverse(maps, layout));
}

Tensor hdrtb_forward(const Tensor& features, const HdrtbParams& params,
                     std::span<const std::size_t> window_schedule) {
  if (window_schedule.size() != params.layers.size()) {
    throw ConfigError("HDRTB window schedule needs exactly 3 entries, got " +
                      std::to_string(window_schedule.size()));
  }
  for (std::size_t i = 1; i < window_schedule.size(); ++i) {
    if (window_schedule[i] < window_schedule[i - 1]) {
      throw ConfigError("HDRTB window schedule must be non-decreasing");
    }
  }
  std::vector<Tensor> stages;
  Tensor x = features;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    x = sscl_forward(x, params.layers[i], window_schedule[i]);
    stages.push_back(x);
  }
  Tensor fused = conv2d(concat(stages, 0), params.fuse_w, params.fuse_b, 0);
  return add(features, scale(fused, params.gamma));
}

}  // namespace hssdct
