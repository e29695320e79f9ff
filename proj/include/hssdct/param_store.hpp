#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hssdct/rng.hpp"
#include "hssdct/tensor.hpp"

namespace hssdct {

/// Named, insertion-ordered learnable tensors with per-parameter Adam moments.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
  };

  /// Registers a leaf (marked requires_grad). Names must be unique.
  Tensor add(std::string name, Tensor value);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const Entry* find(const std::string& name) const;
  Entry* find(const std::string& name);

  /// Total number of scalar parameters.
  std::size_t count() const;
  void zero_grad();
  std::vector<Tensor> tensors() const;

  std::uint64_t step = 0;

 private:
  std::vector<Entry> entries_;
};

/// Deterministic parameter factory: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))
/// drawn in registration order from one seeded stream.
class ParamInit {
 public:
  ParamInit(ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor zeros(const std::string& name, Shape shape);

 private:
  ParamStore& store_;
  Rng rng_;
};

}  // namespace hssdct
