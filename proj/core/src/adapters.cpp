// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/adapters.hpp"

#include <algorithm>
#include <cstring>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/ops.hpp"

namespace hyperadapt {

namespace {

// Accepts [d x batch] or a plain length-d vector; returns a matrix view and
// whether the caller passed a vector.
std::pair<Tensor, bool> as_columns(const Tensor& x, std::size_t d) {
  if (x.ndim() == 1) {
    if (x.numel() != d) {
      throw DimensionError("input vector " + shape_str(x.shape()) + " does not match layer width " +
                           std::to_string(d));
    }
    return {reshape(x, {d, 1}), true};
  }
  if (x.ndim() != 2 || x.rows() != d) {
    throw DimensionError("input " + shape_str(x.shape()) + " does not match layer width " + std::to_string(d));
  }
  return {x, false};
}

Tensor apply_weight(const FrozenLinear& layer, const Tensor& weight, const Tensor& x) {
  auto [cols, was_vector] = as_columns(x, layer.in_dim());
  Tensor y = matmul(weight, cols);
  if (layer.has_bias()) y = add_col_vector(y, layer.bias());
  if (was_vector) y = reshape(y, {layer.out_dim()});
  return y;
}

void fnv1a(std::uint64_t& h, std::span<const double> values) {
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
}

}  // namespace

FrozenLinear::FrozenLinear(Tensor weight, Tensor bias) : weight_(weight.detach()) {
  if (weight_.ndim() != 2) throw DimensionError("frozen weight must be a matrix, got " + shape_str(weight_.shape()));
  if (bias.defined()) {
    if (bias.numel() != weight_.rows()) {
      throw DimensionError("bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight_.shape()));
    }
    bias_ = reshape(bias.detach(), {weight_.rows()});
  }
}

Tensor FrozenLinear::forward(const Tensor& x) const { return apply_weight(*this, weight_, x); }

std::uint64_t FrozenLinear::checksum() const {
  std::uint64_t h = 14695981039346656037ULL;
  fnv1a(h, weight_.values());
  if (has_bias()) fnv1a(h, bias_.values());
  return h;
}

LoraAdapter::LoraAdapter(Tensor a, Tensor b) : factors_{std::move(a), std::move(b)} {
  const auto& A = factors_.a;
  const auto& B = factors_.b;
  if (A.ndim() != 2 || B.ndim() != 2 || B.cols() != A.rows()) {
    throw DimensionError("LoRA factors B " + shape_str(B.shape()) + " and A " + shape_str(A.shape()) +
                         " are not composable");
  }
  const std::size_t limit = std::min(B.rows(), A.cols()) / 2;
  if (A.rows() == 0 || A.rows() > limit) {
    throw ContractError("LoRA rank " + std::to_string(A.rows()) + " must satisfy 1 <= r <= min(d1, d2)/2 = " +
                        std::to_string(limit));
  }
}

LoraAdapter LoraAdapter::init(std::size_t d1, std::size_t d2, std::size_t rank, double init_std,
                              std::mt19937_64& rng) {
  return LoraAdapter(Tensor::randn({rank, d2}, init_std, rng, true), Tensor::zeros({d1, rank}, true));
}

SvdAdapter::SvdAdapter(std::string id, Tensor p, Tensor lambda, Tensor q)
    : id_(std::move(id)), factors_{std::move(p), std::move(lambda), std::move(q)} {
  const auto& P = factors_.p;
  const auto& Q = factors_.q;
  if (P.ndim() != 2 || Q.ndim() != 2 || P.cols() != Q.rows() || factors_.lambda.numel() != P.cols()) {
    throw DimensionError("SVD factors P " + shape_str(P.shape()) + ", lambda " + shape_str(factors_.lambda.shape()) +
                         ", Q " + shape_str(Q.shape()) + " are not composable");
  }
  mask_.assign(P.cols(), true);
}

SvdAdapter SvdAdapter::init(std::string id, std::size_t d1, std::size_t d2, std::size_t rank, double init_std,
                            std::mt19937_64& rng) {
  Tensor p = Tensor::randn({d1, rank}, init_std, rng, true);
  Tensor q = Tensor::randn({rank, d2}, init_std, rng, true);
  return SvdAdapter(std::move(id), std::move(p), Tensor::zeros({rank}, true), std::move(q));
}

std::size_t SvdAdapter::effective_rank() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), true));
}

void SvdAdapter::prune(std::size_t j) {
  if (j >= mask_.size()) throw ContractError("prune index out of range for adapter " + id_);
  if (!mask_[j]) throw ContractError("slot " + std::to_string(j) + " of adapter " + id_ + " is already pruned");
  mask_[j] = false;
}

Tensor lora_delta(const LoraFactors& f) { return matmul(f.b, f.a); }

Tensor svd_delta(const SvdFactors& f, const std::vector<bool>& mask) {
  if (mask.size() != f.lambda.numel()) {
    throw DimensionError("mask length " + std::to_string(mask.size()) + " does not match rank " +
                         std::to_string(f.lambda.numel()));
  }
  return matmul(scale_cols(f.p, mask_select(f.lambda, mask)), f.q);
}

Tensor lora_forward(const FrozenLinear& layer, const LoraFactors& f, const Tensor& x) {
  if (f.b.rows() != layer.out_dim() || f.a.cols() != layer.in_dim()) {
    throw DimensionError("LoRA factors do not match frozen weight " + shape_str(layer.weight().shape()));
  }
  return apply_weight(layer, add(layer.weight(), lora_delta(f)), x);
}

Tensor svd_forward(const FrozenLinear& layer, const SvdFactors& f, const std::vector<bool>& mask, const Tensor& x) {
  if (f.p.rows() != layer.out_dim() || f.q.cols() != layer.in_dim()) {
    throw DimensionError("SVD factors do not match frozen weight " + shape_str(layer.weight().shape()));
  }
  return apply_weight(layer, add(layer.weight(), svd_delta(f, mask)), x);
}

Tensor orth_penalty(const Tensor& p, const Tensor& q) {
  const std::size_t r = p.cols();
  if (q.rows() != r) throw DimensionError("orth_penalty: P and Q ranks differ");
  const Tensor eye = Tensor::eye(r);
  return add(frobenius_sq(sub(matmul(transpose(p), p), eye)), frobenius_sq(sub(matmul(q, transpose(q)), eye)));
}

Tensor effective_delta_w(const SvdAdapter& ad) { return svd_delta(ad.factors(), ad.mask()).detach(); }

}  // namespace hyperadapt
