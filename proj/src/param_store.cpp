#include "hssdct/param_store.hpp"

#include <cmath>

#include "hssdct/error.hpp"

namespace hssdct {

Tensor ParamStore::add(std::string name, Tensor value) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  const auto n = value.numel();
  entries_.push_back(Entry{std::move(name), value, std::vector<double>(n, 0.0),
                           std::vector<double>(n, 0.0)});
  return value;
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

ParamStore::Entry* ParamStore::find(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

Tensor ParamInit::uniform(const std::string& name, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng_.uniform(-bound, bound);
  return store_.add(name, Tensor(std::move(shape), std::move(v)));
}

Tensor ParamInit::zeros(const std::string& name, Shape shape) {
  return store_.add(name, Tensor(std::move(shape)));
}

}  // namespace hssdct
