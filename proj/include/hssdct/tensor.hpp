#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace hssdct {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::optional<std::size_t> tape_node;
};

}  // namespace detail

/// Dense row-major array of doubles with reverse-mode autodiff support.
///
/// A Tensor is a shared handle: copies alias the same buffer. Values are
/// immutable once a tensor has been produced by an operation; leaves
/// (parameters, inputs) may be written through `mutable_values()` between
/// training steps.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Row-major 2-D view. Requires ndim() == 2.
  ConstMatrixMap matrix() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient buffer, allocated as zeros on first access.
  std::span<double> grad_sink() const;
  void zero_grad();

  /// New leaf holding a copy of the values, disconnected from any tape.
  Tensor detach() const;

  std::optional<std::size_t> tape_node() const;
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>, std::initializer_list<Tensor>,
                            std::function<void(std::span<const double>)>);
  friend Tensor make_result(Shape, std::vector<double>, const std::vector<Tensor>&,
                            std::function<void(std::span<const double>)>);

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable operations on the current thread.
class Tape {
 public:
  struct Node {
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void(std::span<const double>)> backward;
  };

  static Tape& active();

  std::size_t record(Node node);
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }

  /// Reverse sweep from a scalar loss; clears the tape afterwards.
  void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
};

bool grad_enabled() noexcept;

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. The backward rule is recorded only when grad mode is
/// on and at least one input requires a gradient; it receives the output
/// gradient and accumulates into the inputs via `grad_sink()`.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward);

void backward(const Tensor& loss);

}  // namespace hssdct
