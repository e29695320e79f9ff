#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "hssdct/data.hpp"
#include "hssdct/losses.hpp"
#include "hssdct/network.hpp"
#include "hssdct/param_store.hpp"

namespace hssdct {

struct TrainConfig {
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  std::size_t total_steps = 500;
  std::size_t batch_size = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossWeights loss_weights;
  std::uint64_t seed = 0;

  void validate() const;

  /// 600 epochs over `dataset_size` scenes at batch size 4.
  static TrainConfig paper_scale(std::size_t dataset_size);
};

/// lr_min + (lr_max - lr_min) (1 + cos(pi step / total_steps)) / 2.
double cosine_lr(std::size_t step, const TrainConfig& config);

/// One bias-corrected Adam update of every entry, using `grads[i]` for entry i.
/// Increments `store.step`.
void adam_step(ParamStore& store, std::span<const std::span<const double>> grads, double lr,
               const TrainConfig& config);
/// Same, reading the gradient accumulated on each parameter tensor.
void adam_step(ParamStore& store, double lr, const TrainConfig& config);

struct HistoryRow {
  std::size_t step = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double sam = 0.0;
  double swt = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  /// Stop once the store reaches this step (resumable later).
  std::optional<std::size_t> stop_at;
  std::function<void(const HistoryRow&)> on_step;
};

/// Dataset position of the `sample`-th draw: each epoch visits every scene
/// once in an order shuffled from (seed, epoch).
std::size_t sample_index(std::uint64_t seed, std::size_t sample, std::size_t dataset_size);

/// Runs Adam with cosine-annealed learning rate from `model.params().step` up
/// to `config.total_steps`. Each step averages the composite loss over
/// `batch_size` scenes.
std::vector<HistoryRow> train(Model& model, std::span<const SceneTriple> dataset,
                              const TrainConfig& config, const TrainOptions& options = {});

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows);

// ---------------------------------------------------------------------------
// Checkpoints: "HCK1", u64 step, u32 metadata length + UTF-8 metadata,
// u32 blob count, then per blob: u32 name length, name, u32 rank,
// rank x u64 extents, float64 payload. All integers and floats little-endian.
// Blob names are "param/<name>", "adam_m/<name>", "adam_v/<name>".

struct CheckpointBlob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::string metadata;
  std::vector<CheckpointBlob> blobs;
};

Checkpoint snapshot(const ParamStore& store, std::string metadata = {});
/// Validates every name and shape before touching the store.
void restore(ParamStore& store, const Checkpoint& checkpoint);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const std::string& metadata = {});
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Reads and restores; returns the stored metadata.
std::string load_checkpoint(const std::filesystem::path& path, ParamStore& store);

}  // namespace hssdct
