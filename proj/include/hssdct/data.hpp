#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hssdct/tensor.hpp"

namespace hssdct {

// ---------------------------------------------------------------------------
// Synthetic scenes (linear mixing model)

struct SynthParams {
  std::uint64_t seed = 0;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t bands = 16;
  std::size_t n_endmembers = 4;
  double noise_sigma = 0.0;
};

struct SynthScene {
  Tensor hr_hsi;      // [C x H x W] in [0, 1]
  Tensor endmembers;  // [K x C]
  Tensor abundances;  // [K x H x W], sums to 1 per pixel
};

/// Endmember spectra are sums of three random Gaussians over the band axis,
/// rescaled to [0.05, 1]; abundances are per-pixel softmaxes of smoothed
/// Gaussian noise fields.
SynthScene synth_scene_detailed(const SynthParams& params);
Tensor synth_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t bands,
                   std::size_t n_endmembers, double noise_sigma);

// ---------------------------------------------------------------------------
// Degradation

/// Normalized Gaussian taps over [-ceil(3 sigma), ceil(3 sigma)].
std::vector<double> gaussian_kernel(double sigma);
/// Separable per-band Gaussian blur with reflect boundary.
Tensor gaussian_blur(const Tensor& cube, double sigma);
/// Blur, then keep samples (ratio*i + ratio/2, ratio*j + ratio/2).
Tensor degrade_spatial(const Tensor& hr_hsi, std::size_t ratio, double sigma);

/// [M x C] response partitioning the bands into M contiguous blocks with
/// uniform weights (block m covers [m*C/M, (m+1)*C/M)).
Tensor default_srf(std::size_t msi_bands, std::size_t hsi_bands);
Tensor degrade_spectral(const Tensor& hr_hsi, const Tensor& srf);

/// Keys bicubic (a = -0.5) upsampling by an integer ratio; LR sample i sits at
/// HR position ratio*i + ratio/2, so upsampling interpolates the decimation
/// grid exactly. Edges replicate. Not differentiable (data path only).
Tensor bicubic_upsample(const Tensor& lr, std::size_t ratio);

// ---------------------------------------------------------------------------
// Scene triples

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t bands = 16;
  std::size_t msi_bands = 4;
  std::size_t ratio = 4;
  std::size_t n_endmembers = 4;
  double noise_sigma = 0.0;
  /// <= 0 selects ratio / 2.
  double blur_sigma = 0.0;
};

struct SceneTriple {
  Tensor hr_hsi;
  Tensor lr_hsi;
  Tensor hr_msi;
  Tensor srf;
  double blur_sigma = 0.0;
  std::size_t ratio = 1;
  std::uint64_t seed = 0;
};

double default_blur_sigma(std::size_t ratio);
SceneTriple make_scene_triple(const SceneSpec& spec);

// ---------------------------------------------------------------------------
// Cube files: "HSC1", u32 h, u32 w, u32 c (little-endian), then c*h*w
// little-endian float64 values in band-sequential order.

std::vector<std::uint8_t> encode_cube(const Tensor& cube);
Tensor decode_cube(std::span<const std::uint8_t> bytes);
void write_cube(const std::filesystem::path& path, const Tensor& cube);
Tensor read_cube(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dataset manifest (JSON)

struct ManifestEntry {
  std::string name;
  std::filesystem::path hr_hsi;  // relative to the manifest directory
  std::filesystem::path lr_hsi;
  std::filesystem::path hr_msi;
  std::uint64_t seed = 0;
  std::size_t ratio = 1;
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;
  std::size_t n_endmembers = 0;
  std::vector<std::vector<double>> srf;
};

struct Manifest {
  std::vector<ManifestEntry> scenes;
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);
/// Loads every cube referenced by the manifest.
std::vector<SceneTriple> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace hssdct
