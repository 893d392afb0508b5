// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "hyperadapt/hypernet.hpp"
#include "hyperadapt/rank_allocator.hpp"

namespace hyperadapt {

enum class Mode { Lora, HyperLora, AdaLora, HyperAdaLora };

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view name);
inline bool is_hyper(Mode m) { return m == Mode::HyperLora || m == Mode::HyperAdaLora; }
inline bool is_svd(Mode m) { return m == Mode::AdaLora || m == Mode::HyperAdaLora; }

enum class TaskVariant { LowRankRegression, SeqClassification };

std::string_view task_name(TaskVariant v);

struct TaskConfig {
  TaskVariant variant = TaskVariant::LowRankRegression;
  std::size_t d1 = 64;
  std::size_t d2 = 64;
  /// Rank of the planted increment on every adapted layer.
  std::size_t true_rank = 2;
  /// Adapted layers (regression only; classification always uses two).
  std::size_t num_layers = 1;
  std::size_t vocab = 32;
  std::size_t seq_len = 8;
  std::size_t classes = 8;
  std::size_t dataset_size = 1024;
  double noise = 0.01;
  /// Largest planted singular value; later ones decay by `signal_decay`.
  double signal = 3.0;
  double signal_decay = 0.6;
  /// Overrides the run seed for data generation when set.
  bool has_seed = false;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  Mode mode = Mode::HyperAdaLora;
  HyperConfig hyper;
  double lr_max = 1e-2;
  double gamma = 0.1;
  std::size_t rank = 3;
  std::size_t batch_size = 8;
  long total_steps = 2000;
  long warmup_steps = 100;
  std::uint64_t seed = 0;
  PruneSchedule prune;
  TaskConfig task;
  double init_std = 0.02;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  /// Convergence threshold as a fraction of the frozen model's dataset loss.
  double threshold = 0.1;
  std::size_t smoothing_window = 20;
  /// Write measured per-step wall time into metrics.csv. Off by default so
  /// that repeated runs produce byte-identical CSVs.
  bool record_wall_ms = false;
  bool save_checkpoint = true;
};

/// Parses and validates a config object. Unknown keys, wrong types and
/// out-of-range values raise ConfigError naming the field. Absent keys take
/// defaults: warmup_steps = 5% of total_steps, prune.start_step = warmup,
/// prune.end_step = 80% of total_steps, prune.target_rank = layers x true_rank.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const TrainConfig& cfg);
/// Re-checks invariants after programmatic edits.
void validate(const TrainConfig& cfg);

/// Number of adapted layers the configured task exposes.
std::size_t adapted_layer_count(const TaskConfig& task);

}  // namespace hyperadapt
