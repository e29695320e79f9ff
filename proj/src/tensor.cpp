#include "hssdct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hssdct/error.hpp"

namespace hssdct {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Config: return "config";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Format: return "format";
    case ErrorKind::Metric: return "metric";
    case ErrorKind::Checkpoint: return "checkpoint";
    case ErrorKind::Training: return "training";
    case ErrorKind::Bench: return "bench";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool t_grad_enabled = true;

detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw UsageError("operation on an undefined tensor");
  return *impl;
}

}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::extent(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ConfigError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::values() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_values() { return checked(impl_).data; }

double Tensor::item() const {
  const auto& d = checked(impl_).data;
  if (d.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(impl_->shape));
  return d[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

ConstMatrixMap Tensor::matrix() const {
  const auto& s = shape();
  if (s.size() != 2) throw DimensionError("matrix view needs a 2-D tensor, got " + shape_str(s));
  return ConstMatrixMap(impl_->data.data(), static_cast<Eigen::Index>(s[0]),
                        static_cast<Eigen::Index>(s[1]));
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  checked(impl_).requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(impl_).grad; }

std::span<double> Tensor::grad_sink() const {
  auto& impl = checked(impl_);
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void Tensor::zero_grad() { checked(impl_).grad.clear(); }

Tensor Tensor::detach() const {
  const auto& impl = checked(impl_);
  return Tensor(impl.shape, impl.data, false);
}

std::optional<std::size_t> Tensor::tape_node() const { return checked(impl_).tape_node; }

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

std::size_t Tape::record(Node node) {
  node.output->tape_node = nodes_.size();
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto node = loss.tape_node();
  if (!node || *node >= nodes_.size() || nodes_[*node].output != loss.impl()) {
    throw UsageError("backward: loss was not produced on the active tape");
  }
  Tensor root = loss;
  root.grad_sink()[0] += 1.0;
  for (std::size_t i = *node + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.output->grad.empty()) continue;
    n.backward(n.output->grad);
  }
  for (auto& n : nodes_) n.output->tape_node.reset();
  nodes_.clear();
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace {

template <typename Range>
Tensor make_result_impl(Shape shape, std::vector<double> values, const Range& inputs,
                        std::function<void(std::span<const double>)> backward) {
#ifdef HSSDCT_CHECK_FINITE
  bool inputs_finite = true;
  for (const auto& in : inputs) {
    for (double v : in.values()) inputs_finite = inputs_finite && std::isfinite(v);
  }
  if (inputs_finite) {
    for (double v : values) {
      if (!std::isfinite(v)) throw UsageError("non-finite value produced from finite inputs");
    }
  }
#endif
  Tensor out(std::move(shape), std::move(values));
  if (!t_grad_enabled) return out;
  const bool any = std::any_of(std::begin(inputs), std::end(inputs),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  Tape::active().record(Tape::Node{out.impl(), std::move(backward)});
  return out;
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward) {
  return make_result_impl(std::move(shape), std::move(values), inputs, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward) {
  return make_result_impl(std::move(shape), std::move(values), inputs, std::move(backward));
}

void backward(const Tensor& loss) { Tape::active().backward(loss); }

}  // namespace hssdct
