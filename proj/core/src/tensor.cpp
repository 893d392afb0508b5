// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;
  std::shared_ptr<GraphNode> node;
};

}  // namespace detail

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
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

void check_shape(const Shape& shape, std::size_t n) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != n) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(n) + " values");
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, values.size());
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from({n, n}, std::move(v));
}

Tensor Tensor::randn(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return from(std::move(shape), std::move(v), requires_grad);
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::numel() const { return impl().values.size(); }

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("rows() needs a matrix, got " + shape_str(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("cols() needs a matrix, got " + shape_str(shape()));
  return shape()[1];
}

std::span<const double> Tensor::values() const { return impl().values; }

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw ContractError("mutable_values() is only allowed on leaf tensors");
  return impl().values;
}

std::vector<double> Tensor::to_vector() const { return impl().values; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl().values[0];
}

double Tensor::at(std::size_t i) const { return impl().values.at(i); }

double Tensor::at(std::size_t i, std::size_t j) const {
  if (i >= rows() || j >= cols()) throw DimensionError("index out of range");
  return impl().values[i * cols() + j];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("requires_grad can only be toggled on leaf tensors");
  impl().requires_grad = flag;
}

bool Tensor::has_grad() const { return impl().grad.has_value(); }

std::span<const double> Tensor::grad() const {
  if (!impl().grad) throw ContractError("tensor has no gradient; call backward() first");
  return *impl().grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl().grad) throw ContractError("tensor has no gradient; call backward() first");
  return *impl().grad;
}

Tensor Tensor::grad_tensor() const { return from(shape(), std::vector<double>(grad().begin(), grad().end())); }

void Tensor::zero_grad() {
  if (impl().grad) std::fill(impl().grad->begin(), impl().grad->end(), 0.0);
}

void Tensor::clear_grad() { impl().grad.reset(); }

bool Tensor::is_leaf() const { return impl().node == nullptr; }
const GraphNode* Tensor::node() const { return impl().node.get(); }

Tensor Tensor::detach() const { return from(shape(), impl().values, false); }
Tensor Tensor::clone() const { return from(shape(), impl().values, requires_grad()); }

Tensor make_op(Shape shape, std::vector<double> values, std::string op, std::vector<Tensor> parents,
               BackwardFn backward_fn) {
  check_shape(shape, values.size());
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  const bool needs_grad =
      std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (needs_grad) {
    impl->requires_grad = true;
    impl->node = std::make_shared<GraphNode>(GraphNode{std::move(op), std::move(parents), std::move(backward_fn)});
  }
  return Tensor(std::move(impl));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw ContractError("backward() on a loss that does not require grad");

  using Impl = detail::TensorImpl;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Impl*> order;
  std::unordered_map<Impl*, bool> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(loss.impl_.get(), 0);
  visited[loss.impl_.get()] = true;
  while (!stack.empty()) {
    auto& [cur, next] = stack.back();
    if (cur->node && next < cur->node->parents.size()) {
      Impl* parent = cur->node->parents[next++].impl_.get();
      if (parent->requires_grad && !visited[parent]) {
        visited[parent] = true;
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    order.push_back(cur);
    stack.pop_back();
  }

  // Per-sweep gradients propagate; the persistent `grad` buffers only accumulate.
  std::unordered_map<Impl*, std::vector<double>> pass;
  pass[loss.impl_.get()] = {1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* cur = *it;
    auto found = pass.find(cur);
    std::vector<double> g = found != pass.end() ? std::move(found->second)
                                                : std::vector<double>(cur->values.size(), 0.0);
    if (found != pass.end()) pass.erase(found);

    if (!cur->grad) {
      cur->grad = g;
    } else {
      auto& acc = *cur->grad;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }

    if (!cur->node) continue;
    auto& parents = cur->node->parents;
    std::vector<std::span<double>> spans(parents.size());
    for (std::size_t i = 0; i < parents.size(); ++i) {
      Impl* p = parents[i].impl_.get();
      if (!p->requires_grad) continue;
      auto& buf = pass[p];
      if (buf.empty()) buf.assign(p->values.size(), 0.0);
      spans[i] = buf;
    }
    cur->node->backward(g, spans);
  }
}

}  // namespace hyperadapt
