#include "hssdct/network.hpp"

#include <algorithm>

#include "hssdct/data.hpp"
#include "hssdct/error.hpp"
#include "hssdct/ops.hpp"

namespace hssdct {

void ModelConfig::validate() const {
  if (hsi_bands == 0) throw ConfigError("model.hsi_bands must be >= 1");
  if (msi_bands == 0) throw ConfigError("model.msi_bands must be >= 1");
  if (feat < 2 || feat % 2 != 0) {
    throw ConfigError("model.feat must be even and >= 2, got " + std::to_string(feat));
  }
  if (n_blocks == 0) throw ConfigError("model.n_blocks must be >= 1");
  if (block_windows.size() != n_blocks) {
    throw ConfigError("model.block_windows has " + std::to_string(block_windows.size()) +
                      " entries for " + std::to_string(n_blocks) + " blocks");
  }
  for (auto w : block_windows) {
    if (w == 0) throw ConfigError("model.block_windows entries must be >= 1");
  }
  if (ratio == 0) throw ConfigError("model.ratio must be >= 1");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper(std::size_t msi_bands) {
  ModelConfig c;
  c.hsi_bands = 172;
  c.msi_bands = msi_bands;
  c.feat = 64;
  c.n_blocks = 4;
  c.block_windows = {4, 8, 16, 16};
  c.ratio = 4;
  return c;
}

std::array<std::size_t, 3> layer_windows(std::size_t base) {
  return {std::min<std::size_t>(4, base), std::min<std::size_t>(8, base), base};
}

namespace {

BranchParams make_branch(ParamInit& init, const std::string& prefix, std::size_t in_bands,
                         const ModelConfig& cfg) {
  BranchParams b;
  b.shallow_w = init.uniform(prefix + ".shallow.weight", {cfg.feat, in_bands, 3, 3}, in_bands * 9);
  b.shallow_b = init.zeros(prefix + ".shallow.bias", {cfg.feat});
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    b.blocks.push_back(make_hdrtb_params(init, prefix + ".block" + std::to_string(i), cfg.feat,
                                         cfg.compress_values));
  }
  return b;
}

}  // namespace

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  ParamInit init(params_, config_.seed);
  spectral_ = make_branch(init, "spe", config_.hsi_bands, config_);
  spatial_ = make_branch(init, "spa", config_.msi_bands, config_);
  const std::size_t c = config_.feat;
  head_.conv1_w = init.uniform("head.conv1.weight", {c, c, 3, 3}, c * 9);
  head_.conv1_b = init.zeros("head.conv1.bias", {c});
  head_.conv2_w = init.zeros("head.conv2.weight", {config_.hsi_bands, c, 3, 3});
  head_.conv2_b = init.zeros("head.conv2.bias", {config_.hsi_bands});
}

Tensor Model::branch(const Tensor& input, const BranchParams& params) const {
  Tensor x = conv2d(input, params.shallow_w, params.shallow_b, 1);
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    const auto windows = layer_windows(config_.block_windows[i]);
    x = hdrtb_forward(x, params.blocks[i], windows);
  }
  return x;
}

Tensor Model::head(const Tensor& fused) const {
  Tensor x = gelu(conv2d(fused, head_.conv1_w, head_.conv1_b, 1));
  return conv2d(x, head_.conv2_w, head_.conv2_b, 1);
}

ForwardTrace Model::trace(const Tensor& lr_hsi, const Tensor& hr_msi,
                          const ForwardOptions& options) const {
  if (lr_hsi.ndim() != 3 || hr_msi.ndim() != 3) {
    throw DimensionError("forward expects [B,h,w] LR-HSI and [M,H,W] HR-MSI, got " +
                         shape_str(lr_hsi.shape()) + " and " + shape_str(hr_msi.shape()));
  }
  const Shape expected_lr{config_.hsi_bands, hr_msi.extent(1) / config_.ratio,
                          hr_msi.extent(2) / config_.ratio};
  if (hr_msi.extent(0) != config_.msi_bands || lr_hsi.extent(0) != config_.hsi_bands ||
      hr_msi.extent(1) % config_.ratio != 0 || hr_msi.extent(2) % config_.ratio != 0 ||
      lr_hsi.shape() != expected_lr) {
    throw DimensionError("forward geometry: expected LR-HSI " + shape_str(expected_lr) +
                         " and HR-MSI with " + std::to_string(config_.msi_bands) +
                         " bands at ratio " + std::to_string(config_.ratio) + ", got " +
                         shape_str(lr_hsi.shape()) + " and " + shape_str(hr_msi.shape()));
  }
  ForwardTrace t;
  t.upsampled = bicubic_upsample(lr_hsi.detach(), config_.ratio);
  const Shape feat_shape{config_.feat, hr_msi.extent(1), hr_msi.extent(2)};
  t.spectral = options.zero_spectral ? Tensor(feat_shape) : branch(t.upsampled, spectral_);
  t.spatial = options.zero_spatial ? Tensor(feat_shape) : branch(hr_msi, spatial_);
  t.output = add(t.upsampled, head(add(t.spectral, t.spatial)));
  return t;
}

Tensor Model::forward(const Tensor& lr_hsi, const Tensor& hr_msi) const {
  return trace(lr_hsi, hr_msi).output;
}

std::size_t param_count(const ParamStore& store) { return store.count(); }
std::size_t param_count(const Model& model) { return model.params().count(); }

}  // namespace hssdct
