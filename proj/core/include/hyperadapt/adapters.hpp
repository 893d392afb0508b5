// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

/// Pretrained weight W0 [d1 x d2] (plus optional bias [d1]) that never trains.
class FrozenLinear {
 public:
  FrozenLinear() = default;
  explicit FrozenLinear(Tensor weight, Tensor bias = {});

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  bool has_bias() const { return bias_.defined(); }
  std::size_t out_dim() const { return weight_.rows(); }
  std::size_t in_dim() const { return weight_.cols(); }

  /// W0 x (+ b). `x` is [d2 x batch] or a length-d2 vector.
  Tensor forward(const Tensor& x) const;

  /// FNV-1a over the raw bytes of W0 and bias.
  std::uint64_t checksum() const;

 private:
  Tensor weight_;
  Tensor bias_;
};

/// Trainable LoRA factors; effective weight is W0 + B A.
struct LoraFactors {
  Tensor a;  // [r x d2]
  Tensor b;  // [d1 x r]
};

class LoraAdapter {
 public:
  /// A ~ N(0, init_std^2), B = 0. Requires r <= min(d1, d2) / 2.
  static LoraAdapter init(std::size_t d1, std::size_t d2, std::size_t rank, double init_std, std::mt19937_64& rng);
  LoraAdapter(Tensor a, Tensor b);

  const LoraFactors& factors() const { return factors_; }
  LoraFactors& factors() { return factors_; }
  std::size_t rank() const { return factors_.a.rows(); }

 private:
  LoraFactors factors_;
};

/// SVD-form factors; effective weight is W0 + P diag(lambda) Q.
struct SvdFactors {
  Tensor p;       // [d1 x r]
  Tensor lambda;  // [r]
  Tensor q;       // [r x d2]
};

/// SVD-form adapter with a persistent pruning mask. Masked slots contribute
/// exactly zero; pruning only ever clears mask entries.
class SvdAdapter {
 public:
  SvdAdapter(std::string id, Tensor p, Tensor lambda, Tensor q);

  /// P, Q ~ N(0, init_std^2), lambda = 0, all slots live.
  static SvdAdapter init(std::string id, std::size_t d1, std::size_t d2, std::size_t rank, double init_std,
                         std::mt19937_64& rng);

  const std::string& id() const { return id_; }
  std::size_t rank() const { return mask_.size(); }
  std::size_t out_dim() const { return factors_.p.rows(); }
  std::size_t in_dim() const { return factors_.q.cols(); }
  std::size_t effective_rank() const;

  const SvdFactors& factors() const { return factors_; }
  SvdFactors& factors() { return factors_; }
  const std::vector<bool>& mask() const { return mask_; }

  /// Clears slot j. Throws ContractError if it is already masked.
  void prune(std::size_t j);

 private:
  std::string id_;
  SvdFactors factors_;
  std::vector<bool> mask_;
};

/// B A as a dense [d1 x d2] tensor.
Tensor lora_delta(const LoraFactors& f);
/// P diag(lambda (.) mask) Q as a dense [d1 x d2] tensor.
Tensor svd_delta(const SvdFactors& f, const std::vector<bool>& mask);

/// (W0 + B A) x (+ b).
Tensor lora_forward(const FrozenLinear& layer, const LoraFactors& f, const Tensor& x);
inline Tensor lora_forward(const FrozenLinear& layer, const LoraAdapter& ad, const Tensor& x) {
  return lora_forward(layer, ad.factors(), x);
}

/// (W0 + P diag(lambda (.) mask) Q) x (+ b).
Tensor svd_forward(const FrozenLinear& layer, const SvdFactors& f, const std::vector<bool>& mask, const Tensor& x);
inline Tensor svd_forward(const FrozenLinear& layer, const SvdAdapter& ad, const Tensor& x) {
  return svd_forward(layer, ad.factors(), ad.mask(), x);
}

/// ||P^T P - I||_F^2 + ||Q Q^T - I||_F^2 with I of size r x r.
Tensor orth_penalty(const Tensor& p, const Tensor& q);
inline Tensor orth_penalty(const SvdAdapter& ad) { return orth_penalty(ad.factors().p, ad.factors().q); }

/// Materialized Delta W = P diag(lambda (.) mask) Q, detached from any graph.
Tensor effective_delta_w(const SvdAdapter& ad);

}  // namespace hyperadapt
