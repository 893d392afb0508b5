// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hyperadapt/adapters.hpp"
#include "hyperadapt/config.hpp"

namespace hyperadapt {

/// One mini-batch. Regression fills `x` ([d2 x B]) and one target per
/// adapted layer; classification fills `x` (mean-pooled embeddings) and
/// `labels`.
struct Batch {
  Tensor x;
  std::vector<Tensor> targets;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;
};

/// Output of adapted layer `layer` applied to `x`.
using LayerFn = std::function<Tensor(std::size_t layer, const Tensor& x)>;

/// Seeded desk-scale stand-in for a fine-tuning dataset.
///
/// lowrank_regression: `num_layers` frozen maps W0_l; targets are
///   Y_l = (W0_l + P*_l diag(s*) Q*_l) X + noise, with a planted increment of
///   rank true_rank (orthonormal P*, Q*; s*_j = signal * decay^j).
/// seq_classification: frozen token embeddings, two adapted tanh layers and a
///   frozen head; labels are the argmax of a teacher that carries planted
///   increments on both layers.
class SyntheticTask {
 public:
  SyntheticTask(const TaskConfig& cfg, std::uint64_t seed);

  const TaskConfig& config() const { return cfg_; }
  const std::vector<FrozenLinear>& base_layers() const { return base_; }
  std::vector<std::string> adapter_ids() const;
  /// Planted increment for layer l (dense).
  const Tensor& planted_delta(std::size_t l) const { return planted_[l]; }

  Batch sample_batch(std::size_t batch_size, std::mt19937_64& rng) const;
  Batch full_batch() const;

  /// Model outputs for the task head(s): one tensor per regression layer, or
  /// a single [B x classes] logits tensor.
  std::vector<Tensor> outputs(const LayerFn& layer, const Batch& batch) const;
  Tensor loss(const std::vector<Tensor>& outputs, const Batch& batch) const;
  Tensor task_loss(const LayerFn& layer, const Batch& batch) const { return loss(outputs(layer, batch), batch); }

  LayerFn frozen_fn() const;
  /// Loss of the frozen model over the whole dataset; the convergence
  /// threshold is a fraction of this.
  double reference_loss() const;

 private:
  Batch gather(const std::vector<std::size_t>& idx) const;

  TaskConfig cfg_;
  std::vector<FrozenLinear> base_;
  std::vector<Tensor> planted_;
  // regression
  Tensor inputs_;                // [d2 x N]
  std::vector<Tensor> targets_;  // per layer [d1 x N]
  // classification
  FrozenLinear head_;
  std::vector<std::size_t> labels_;
};

}  // namespace hyperadapt
