// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperadapt/adapters.hpp"

namespace hyperadapt {

/// When pruning fires. Events happen at start_step + n * delta_t (n >= 1)
/// up to and including end_step. `target_rank` is a floor on the total
/// effective rank: an event never prunes below it.
struct PruneSchedule {
  bool enabled = true;
  std::size_t delta_t = 50;
  std::size_t k = 1;
  long start_step = 0;
  long end_step = 0;
  std::size_t target_rank = 0;
};

bool should_prune(long step, const PruneSchedule& sched);

/// Importance of one live singular value: score = |sigma * grad|.
struct ImportanceRecord {
  std::string adapter_id;
  std::size_t index = 0;
  double sigma = 0.0;
  double grad = 0.0;
  double score = 0.0;
};

/// Current singular values of one adapter and dL/dsigma taken this step.
struct LambdaObservation {
  std::string adapter_id;
  std::vector<double> sigma;
  std::optional<std::vector<double>> grad;
  std::vector<bool> mask;
};

/// One record per live slot, ordered by (adapter_id, index). Throws
/// ContractError naming the adapter when its gradient is missing.
std::vector<ImportanceRecord> collect_scores(const std::vector<LambdaObservation>& observations);

struct PruneTarget {
  std::string adapter_id;
  std::size_t index = 0;
  double score = 0.0;

  friend bool operator==(const PruneTarget&, const PruneTarget&) = default;
};

/// The min(k, |records|) globally smallest scores, ties broken by
/// (adapter_id, index) ascending. Returned sorted by (adapter_id, index).
std::vector<PruneTarget> select_prune(const std::vector<ImportanceRecord>& records, std::size_t k);

/// Clears the mask bit of every target. With `zero_lambda` the stored singular
/// value is also set to 0 (direct training). Throws ContractError if a target
/// is unknown or already pruned.
void apply_prune(std::vector<SvdAdapter>& adapters, const std::vector<PruneTarget>& selection, bool zero_lambda);

std::size_t total_effective_rank(const std::vector<SvdAdapter>& adapters);

/// How many slots an event may remove: min(k, live - target_rank), floored at 0.
/// `clamped` reports whether the request was cut short.
std::size_t prune_budget(const PruneSchedule& sched, std::size_t live, bool* clamped = nullptr);

struct PruneEvent {
  long step = 0;
  std::vector<PruneTarget> pruned;
  std::size_t remaining_rank = 0;
  bool clamped = false;
};

/// {"step":..,"pruned":[[adapter_id,j,score],..],"remaining_rank":..}
nlohmann::json prune_event_json(const PruneEvent& ev);

}  // namespace hyperadapt
