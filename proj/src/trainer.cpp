#include "hssdct/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "hssdct/error.hpp"
#include "hssdct/ops.hpp"
#include "hssdct/rng.hpp"

namespace hssdct {

void TrainConfig::validate() const {
  if (!(lr_min >= 0.0) || !(lr_max >= lr_min)) {
    throw ConfigError("train: need 0 <= lr_min <= lr_max");
  }
  if (total_steps == 0) throw ConfigError("train.total_steps must be >= 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train.eps must be > 0");
  loss_weights.validate();
}

TrainConfig TrainConfig::paper_scale(std::size_t dataset_size) {
  TrainConfig c;
  c.batch_size = 4;
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, (dataset_size + 3) / 4);
  c.total_steps = 600 * steps_per_epoch;
  return c;
}

double cosine_lr(std::size_t step, const TrainConfig& config) {
  if (step > config.total_steps) {
    throw UsageError("cosine_lr: step " + std::to_string(step) + " beyond total_steps " +
                     std::to_string(config.total_steps));
  }
  const double phase = std::numbers::pi * static_cast<double>(step) /
                       static_cast<double>(config.total_steps);
  return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + std::cos(phase));
}

void adam_step(ParamStore& store, std::span<const std::span<const double>> grads, double lr,
               const TrainConfig& config) {
  auto& entries = store.entries();
  if (grads.size() != entries.size()) {
    throw UsageError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(entries.size()) + " parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (grads[i].size() != entries[i].value.numel()) {
      throw UsageError("adam_step: missing or misshaped gradient for parameter '" +
                       entries[i].name + "'");
    }
  }
  const double t = static_cast<double>(store.step + 1);
  const double correct1 = 1.0 - std::pow(config.beta1, t);
  const double correct2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    auto theta = e.value.mutable_values();
    const auto g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      e.adam_m[j] = config.beta1 * e.adam_m[j] + (1.0 - config.beta1) * g[j];
      e.adam_v[j] = config.beta2 * e.adam_v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = e.adam_m[j] / correct1;
      const double v_hat = e.adam_v[j] / correct2;
      theta[j] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
  ++store.step;
}

void adam_step(ParamStore& store, double lr, const TrainConfig& config) {
  std::vector<std::span<const double>> grads;
  grads.reserve(store.size());
  for (const auto& e : store.entries()) {
    if (!e.value.has_grad()) {
      throw UsageError("adam_step: missing gradient for parameter '" + e.name + "'");
    }
    grads.push_back(e.value.grad());
  }
  adam_step(store, grads, lr, config);
}

namespace {

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

std::size_t sample_index(std::uint64_t seed, std::size_t sample, std::size_t dataset_size) {
  if (dataset_size == 0) throw UsageError("sample_index: empty dataset");
  return epoch_order(seed, sample / dataset_size, dataset_size)[sample % dataset_size];
}

std::vector<HistoryRow> train(Model& model, std::span<const SceneTriple> dataset,
                              const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw UsageError("train: empty dataset");
  auto& store = model.params();
  const std::size_t end = std::min(config.total_steps, options.stop_at.value_or(config.total_steps));
  const std::size_t n = dataset.size();
  std::vector<HistoryRow> history;

  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  auto pick = [&](std::size_t sample) {
    const std::size_t epoch = sample / n;
    if (epoch != cached_epoch) {
      order = epoch_order(config.seed, epoch, n);
      cached_epoch = epoch;
    }
    return order[sample % n];
  };

  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
  while (store.step < end) {
    const std::size_t step = store.step;
    const double lr = cosine_lr(step, config);
    Tape::active().clear();
    store.zero_grad();
    HistoryRow row;
    row.step = step;
    row.lr = lr;
    for (std::size_t j = 0; j < config.batch_size; ++j) {
      const auto& scene = dataset[pick(step * config.batch_size + j)];
      const Tensor pred = model.forward(scene.lr_hsi, scene.hr_msi);
      const auto terms = loss_terms(pred, scene.hr_hsi, config.loss_weights);
      const double value = terms.total.item();
      if (!std::isfinite(value)) {
        Tape::active().clear();
        throw TrainingError("non-finite loss at step " + std::to_string(step));
      }
      row.loss += value * inv_batch;
      row.l1 += terms.l1.item() * inv_batch;
      row.sam += terms.sam.item() * inv_batch;
      row.swt += terms.swt.item() * inv_batch;
      backward(scale(terms.total, inv_batch));
    }
    adam_step(store, lr, config);
    history.push_back(row);
    if (options.on_step) options.on_step(row);
  }
  store.zero_grad();
  return history;
}

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "step,loss,l1,sam,swt,lr\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss, r.l1,
                  r.sam, r.swt, r.lr);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// checkpoints

Checkpoint snapshot(const ParamStore& store, std::string metadata) {
  Checkpoint c;
  c.step = store.step;
  c.metadata = std::move(metadata);
  for (const auto& e : store.entries()) {
    const auto v = e.value.values();
    c.blobs.push_back({"param/" + e.name, e.value.shape(), {v.begin(), v.end()}});
  }
  for (const auto& e : store.entries()) c.blobs.push_back({"adam_m/" + e.name, e.value.shape(), e.adam_m});
  for (const auto& e : store.entries()) c.blobs.push_back({"adam_v/" + e.name, e.value.shape(), e.adam_v});
  return c;
}

void restore(ParamStore& store, const Checkpoint& checkpoint) {
  std::unordered_map<std::string, const CheckpointBlob*> by_name;
  for (const auto& b : checkpoint.blobs) by_name[b.name] = &b;
  if (by_name.size() != 3 * store.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(by_name.size()) + " blobs, model needs " +
                          std::to_string(3 * store.size()));
  }
  auto lookup = [&](const std::string& name, const Shape& shape) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks blob '" + name + "'");
    if (it->second->shape != shape) {
      throw CheckpointError("blob '" + name + "' has shape " + shape_str(it->second->shape) +
                            ", model expects " + shape_str(shape));
    }
    return it->second;
  };
  for (const auto& e : store.entries()) {
    lookup("param/" + e.name, e.value.shape());
    lookup("adam_m/" + e.name, e.value.shape());
    lookup("adam_v/" + e.name, e.value.shape());
  }
  for (auto& e : store.entries()) {
    const auto& p = lookup("param/" + e.name, e.value.shape())->values;
    std::copy(p.begin(), p.end(), e.value.mutable_values().begin());
    e.adam_m = lookup("adam_m/" + e.name, e.value.shape())->values;
    e.adam_v = lookup("adam_v/" + e.name, e.value.shape())->values;
  }
  store.step = checkpoint.step;
}

namespace {

constexpr std::uint8_t kCheckpointMagic[4] = {'H', 'C', 'K', '1'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(bytes_.size()) +
                        " (needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ")");
    }
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint64_t>(out, c.step);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.metadata.size()));
  out.insert(out.end(), c.metadata.begin(), c.metadata.end());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.blobs.size()));
  for (const auto& b : c.blobs) {
    if (shape_numel(b.shape) != b.values.size()) {
      throw CheckpointError("blob '" + b.name + "' size does not match its shape");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto e : b.shape) put_le<std::uint64_t>(out, e);
    for (double v : b.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4);
  if (!std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin())) {
    throw FormatError("bad checkpoint magic at byte 0 (expected \"HCK1\")");
  }
  r.str(4);
  Checkpoint c;
  c.step = r.get<std::uint64_t>();
  c.metadata = r.str(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointBlob b;
    b.name = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto e = r.get<std::uint64_t>();
      if (e != 0 && n > (bytes.size() / 8) / e) {
        throw FormatError("extent overflow in blob '" + b.name + "' at byte " + std::to_string(r.pos()));
      }
      n *= e;
      b.shape.push_back(static_cast<std::size_t>(e));
    }
    r.need(8 * n);
    b.values.resize(n);
    for (auto& v : b.values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    c.blobs.push_back(std::move(b));
  }
  if (!r.done()) throw FormatError("trailing data in checkpoint at byte " + std::to_string(r.pos()));
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const std::string& metadata) {
  const auto bytes = encode_checkpoint(snapshot(store, metadata));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  return decode_checkpoint(bytes);
}

std::string load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  auto c = read_checkpoint(path);
  restore(store, c);
  return c.metadata;
}

}  // namespace hssdct
