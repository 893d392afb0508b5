// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

/// Linear warm-up from 0 to lr_max over `warmup` steps, then cosine decay to
/// 0 at `total`. Throws ConfigError if total <= warmup and ContractError if
/// step lies outside [0, total].
double lr_at(long step, double lr_max, long warmup, long total);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters that received no gradient this step
/// are left untouched.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions opts = {});

  void step(double lr);
  void zero_grad();

  const std::vector<Tensor>& params() const { return params_; }
  std::size_t step_count() const { return t_; }
  /// Total float64 entries held in first + second moment buffers.
  std::size_t moment_entries() const;
  std::size_t param_entries() const;

 private:
  std::vector<Tensor> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace hyperadapt
