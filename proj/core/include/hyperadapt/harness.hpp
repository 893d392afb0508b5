// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperadapt/config.hpp"
#include "hyperadapt/gradcheck.hpp"
#include "hyperadapt/metrics.hpp"
#include "hyperadapt/rank_allocator.hpp"

namespace hyperadapt {

/// Creates `<root>/<UTC timestamp>-<tag>`, appending a counter on collision.
std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& tag);

/// Absolute loss threshold: cfg.threshold times the frozen model's loss on
/// the full dataset.
double absolute_threshold(const TrainConfig& cfg);

struct RunResult {
  std::filesystem::path dir;
  std::vector<StepMetrics> metrics;
  std::vector<PruneEvent> prune_events;
  double threshold = 0.0;
  std::optional<long> steps_to_threshold;
  LatencyStats latency;
  std::size_t peak_param_bytes = 0;
  bool aborted = false;
  std::string error;
};

/// Trains one configuration and writes into `dir`:
///   metrics.csv, prune_events.jsonl, report.json, config.resolved.json and,
///   when enabled, checkpoint.hakv. A non-finite loss marks the result
///   aborted and leaves error.txt behind instead of throwing.
RunResult execute_run(const TrainConfig& cfg, const std::filesystem::path& dir);

nlohmann::json run_report_json(const TrainConfig& cfg, const RunResult& r);

/// One column of a comparison. Accepted spellings: a mode name
/// ("adalora"), a mode with backend ("hyper_adalora:mlp"), or the shorthand
/// "hyper:<backend>" for hyper_adalora.
struct ModeSpec {
  Mode mode = Mode::AdaLora;
  std::optional<BackendKind> backend;
  std::string label;
};

ModeSpec parse_mode_spec(std::string_view text);
std::vector<ModeSpec> parse_mode_list(std::string_view csv);
TrainConfig apply_mode(const TrainConfig& base, const ModeSpec& spec);

struct CompareRow {
  std::string label;
  std::size_t runs = 0;
  std::size_t failed = 0;
  std::size_t reached = 0;
  /// Median steps to threshold; +inf when fewer than half the seeds reach it.
  double median_steps = 0.0;
  /// median_steps / median_steps of the first row.
  double ratio = 0.0;
  double latency_mean_ms = 0.0;
  double latency_p95_ms = 0.0;
  std::size_t peak_param_bytes = 0;
};

struct CompareReport {
  std::filesystem::path dir;
  std::vector<CompareRow> rows;
  /// results[mode][seed_index]
  std::vector<std::vector<RunResult>> results;
  bool any_failed = false;
};

struct CompareOptions {
  std::size_t seeds = 5;
  std::size_t parallel = 1;
  /// Overrides cfg.threshold when set.
  std::optional<double> threshold;
};

/// Runs every mode x seed cell (seeds cfg.seed, cfg.seed+1, ...) under
/// `dir/cells/<label>/seed<s>` and writes summary.csv, report.json and the
/// aligned curves: curves/<label>.csv (one smoothed task-loss column per
/// seed) and curves/median.csv (median across seeds, one column per mode).
CompareReport run_compare(const TrainConfig& base, const std::vector<ModeSpec>& modes, const CompareOptions& opts,
                          const std::filesystem::path& dir);

nlohmann::json compare_report_json(const CompareReport& rep);
std::string format_compare_table(const CompareReport& rep);

struct StepCostRecord {
  LatencyStats latency;
  std::size_t peak_param_bytes = 0;
  std::size_t trainable_entries = 0;
  std::size_t moment_entries = 0;
  std::size_t adapter_entries = 0;
  std::size_t frozen_entries = 0;
};

/// Times `steps` training steps (at least 110), discarding the first 10.
StepCostRecord measure_step_cost(const TrainConfig& cfg, long steps = 110);
nlohmann::json step_cost_json(const StepCostRecord& rec);

/// Finite-difference cases for every differentiable op, each hypernetwork
/// backend, and the direct and hyper end-to-end pipelines.
std::vector<GradCheckCase> standard_gradcheck_cases();
std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows);

}  // namespace hyperadapt
