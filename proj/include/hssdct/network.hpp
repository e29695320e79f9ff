#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hssdct/blocks.hpp"
#include "hssdct/param_store.hpp"
#include "hssdct/tensor.hpp"

namespace hssdct {

struct ModelConfig {
  std::size_t hsi_bands = 16;
  std::size_t msi_bands = 4;
  std::size_t feat = 32;
  std::size_t n_blocks = 2;
  std::vector<std::size_t> block_windows{4, 8};
  std::size_t ratio = 4;
  std::uint64_t seed = 0;
  bool compress_values = false;

  /// Throws ConfigError naming the first offending field.
  void validate() const;

  static ModelConfig desk();
  /// 172-band LR-HSI, four blocks with base windows {4, 8, 16, 16}.
  static ModelConfig paper(std::size_t msi_bands = 4);
};

/// Windows of the three SSCL layers inside a block with base window `base`:
/// {min(4, base), min(8, base), base}.
std::array<std::size_t, 3> layer_windows(std::size_t base);

struct BranchParams {
  Tensor shallow_w;  // [C x bands x 3 x 3]
  Tensor shallow_b;
  std::vector<HdrtbParams> blocks;
};

/// conv3x3 -> GELU -> conv3x3 (zero at init), C -> hsi_bands.
struct HeadParams {
  Tensor conv1_w;
  Tensor conv1_b;
  Tensor conv2_w;
  Tensor conv2_b;
};

struct ForwardOptions {
  bool zero_spatial = false;
  bool zero_spectral = false;
};

struct ForwardTrace {
  Tensor upsampled;  // bicubic LR-HSI on the HR grid
  Tensor spectral;   // F_Spe
  Tensor spatial;    // F_Spa
  Tensor output;     // Y*
};

/// Dual-branch fusion network. Parameters live in `params()`; the branch and
/// head structs hold handles into the same tensors.
class Model {
 public:
  explicit Model(ModelConfig config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  Tensor forward(const Tensor& lr_hsi, const Tensor& hr_msi) const;
  ForwardTrace trace(const Tensor& lr_hsi, const Tensor& hr_msi,
                     const ForwardOptions& options = {}) const;
  /// F_final: fused features -> residual added to the upsampled LR-HSI.
  Tensor head(const Tensor& fused) const;
  Tensor branch(const Tensor& input, const BranchParams& params) const;

  const BranchParams& spectral_branch() const noexcept { return spectral_; }
  const BranchParams& spatial_branch() const noexcept { return spatial_; }
  const HeadParams& head_params() const noexcept { return head_; }

 private:
  ModelConfig config_;
  ParamStore params_;
  BranchParams spectral_;
  BranchParams spatial_;
  HeadParams head_;
};

std::size_t param_count(const Model& model);
std::size_t param_count(const ParamStore& store);

}  // namespace hssdct
