// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "hyperadapt/adapters.hpp"
#include "hyperadapt/checkpoint.hpp"
#include "hyperadapt/config.hpp"
#include "hyperadapt/hypernet.hpp"
#include "hyperadapt/metrics.hpp"
#include "hyperadapt/optim.hpp"
#include "hyperadapt/rank_allocator.hpp"
#include "hyperadapt/task.hpp"

namespace hyperadapt {

/// lr_at() with the schedule fields of `cfg`.
double lr_at(long step, const TrainConfig& cfg);

/// task_loss + gamma * sum_i (||P_i^T P_i - I||_F^2 + ||Q_i Q_i^T - I||_F^2).
Tensor composite_loss(const Tensor& task_loss, const std::vector<SvdFactors>& factors, double gamma);
/// Sum of orthogonality penalties over adapters (0 for an empty list).
Tensor total_orth_penalty(const std::vector<SvdFactors>& factors);

/// Raised when a step produces a non-finite loss. `what()` carries a dump of
/// the last ten step metrics.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One training run: model state, optimizer and the per-step cycle.
///
/// Direct modes (lora, adalora) optimize adapter factors with Adam. Hyper
/// modes (hyper_lora, hyper_adalora) keep the factors as plain buffers and,
/// every step:
///   1. regenerate each factor from its stored buffer with the role's HyperNet
///      (lambda additionally passes through the pruning mask),
///   2. run the task forward and the composite loss on the generated values,
///   3. backpropagate into Φ, keeping the gradient at every generated lambda,
///   4. take an Adam step on Φ,
///   5. overwrite the stored buffers with the detached generated values,
///   6. prune if the schedule fires, scoring with the step-3 gradients.
/// In lora-family modes the P role generates B and the Q role generates A.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  Trainer(TrainConfig cfg, std::shared_ptr<const SyntheticTask> task);

  const TrainConfig& config() const { return cfg_; }
  const SyntheticTask& task() const { return *task_; }
  std::shared_ptr<const SyntheticTask> task_ptr() const { return task_; }

  Batch next_batch();
  StepMetrics train_step(const Batch& batch, long step);
  /// Runs steps [0, total_steps), invoking `on_step` after each.
  std::vector<StepMetrics> run(const std::function<void(const StepMetrics&)>& on_step = {});

  /// Task outputs under the current adapter state (generating in hyper modes).
  std::vector<Tensor> current_outputs(const Batch& batch) const;
  std::vector<Tensor> frozen_outputs(const Batch& batch) const;

  const std::vector<SvdAdapter>& svd_adapters() const { return svd_; }
  std::vector<SvdAdapter>& svd_adapters() { return svd_; }
  const std::vector<LoraAdapter>& lora_adapters() const { return lora_; }
  std::vector<LoraAdapter>& lora_adapters() { return lora_; }
  const HyperNet* hypernet(HyperRole role) const;
  HyperNet* hypernet(HyperRole role);

  /// Factors used in the most recent forward pass. In hyper modes these are
  /// the generated (non-leaf) tensors, still linked to their graph.
  const std::vector<SvdFactors>& last_factors() const { return last_factors_; }

  /// Trainable tensors: Φ in hyper modes, adapter factors otherwise.
  std::vector<Tensor> trainable_parameters() const;
  /// Stored adapter buffers (P, lambda, Q or A, B) of every adapter.
  std::vector<Tensor> adapter_buffers() const;

  std::size_t effective_rank_total() const;
  /// 8 bytes x (frozen weights + adapter buffers + trainable params + Adam moments).
  std::size_t parameter_bytes() const;

  const std::vector<PruneEvent>& prune_events() const { return prune_events_; }
  std::size_t prune_clamp_count() const { return clamp_count_; }

  /// Adapter and (in hyper modes) hypernetwork state as a key-value checkpoint.
  KvCheckpoint checkpoint() const;

 private:
  void init_params();
  std::vector<SvdFactors> build_factors() const;
  LayerFn layer_fn(const std::vector<SvdFactors>& factors) const;
  std::string dump_recent() const;

  TrainConfig cfg_;
  std::shared_ptr<const SyntheticTask> task_;
  std::mt19937_64 init_rng_;
  std::mt19937_64 batch_rng_;

  std::vector<SvdAdapter> svd_;
  std::vector<LoraAdapter> lora_;
  std::unique_ptr<HyperNet> h_p_, h_lambda_, h_q_;
  std::unique_ptr<Adam> optimizer_;

  std::vector<SvdFactors> last_factors_;
  std::vector<PruneEvent> prune_events_;
  std::size_t clamp_count_ = 0;
  std::deque<StepMetrics> recent_;
};

}  // namespace hyperadapt
