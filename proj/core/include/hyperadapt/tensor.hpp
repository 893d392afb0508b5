// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hyperadapt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

/// Backward rule of one graph node. Receives the gradient flowing into the
/// node's output and one buffer per parent. Buffers of parents that do not
/// require grad are empty spans; rules must add (never assign) into the rest.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> parent_grads)>;

struct GraphNode;

namespace detail {
struct TensorImpl;
}

/// Dense row-major float64 tensor with optional reverse-mode graph linkage.
///
/// `Tensor` is a cheap shared handle: copies alias the same storage. Use
/// `clone()` or `detach()` when an independent buffer is needed.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor eye(std::size_t n);
  static Tensor randn(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  /// Mutable access to the value buffer. Only allowed on leaves; mutating a
  /// tensor that already feeds a graph invalidates that graph's saved context.
  std::span<double> mutable_values();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  Tensor grad_tensor() const;
  void zero_grad();
  /// Drops the gradient buffer entirely, returning the tensor to the
  /// "never received a gradient" state.
  void clear_grad();

  bool is_leaf() const;
  const GraphNode* node() const;

  /// Value copy with no graph and requires_grad=false.
  Tensor detach() const;
  /// Value copy that keeps requires_grad but has no graph.
  Tensor clone() const;

  bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  const void* id() const noexcept { return impl_.get(); }

 private:
  friend Tensor make_op(Shape, std::vector<double>, std::string, std::vector<Tensor>, BackwardFn);
  friend void backward(const Tensor&);

  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

struct GraphNode {
  std::string op;
  std::vector<Tensor> parents;
  BackwardFn backward;
};

/// Builds the output of a differentiable op. When no parent requires grad the
/// result is a plain constant and `backward_fn` is discarded.
Tensor make_op(Shape shape, std::vector<double> values, std::string op, std::vector<Tensor> parents,
               BackwardFn backward_fn);

/// Reverse-mode sweep from a scalar loss. Gradients are added into every
/// reachable tensor with requires_grad=true, leaves and intermediates alike;
/// repeated calls accumulate until `zero_grad()`.
void backward(const Tensor& loss);

}  // namespace hyperadapt
