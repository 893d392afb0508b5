// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hyperadapt {

struct StepMetrics {
  long step = 0;
  double task_loss = 0.0;
  double orth_penalty_value = 0.0;
  double total_loss = 0.0;
  double lr = 0.0;
  std::size_t effective_rank_total = 0;
  double wall_clock_ms = 0.0;
  std::size_t peak_param_bytes = 0;
};

inline constexpr const char* kMetricsCsvHeader =
    "step,task_loss,orth_penalty,total_loss,lr,effective_rank,wall_ms,peak_param_bytes";

/// One CSV row (no newline). Floats use %.17g so values round-trip exactly.
/// With `include_wall_ms` false the wall_ms column is written as 0.
std::string metrics_csv_row(const StepMetrics& m, bool include_wall_ms);
void write_metrics_csv(std::ostream& os, const std::vector<StepMetrics>& rows, bool include_wall_ms);
/// Parses a metrics CSV written by `write_metrics_csv`. Throws on a header
/// mismatch or a malformed row.
std::vector<StepMetrics> read_metrics_csv(std::istream& is);

/// Trailing moving average: out[t] = mean(values[max(0, t-window+1) .. t]).
std::vector<double> smooth(const std::vector<double>& values, std::size_t window);

/// First step whose smoothed loss is <= threshold, or nullopt.
std::optional<long> steps_to_threshold(const std::vector<double>& losses, double threshold, std::size_t window);

struct LatencyStats {
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  double cv = 0.0;
  std::size_t samples = 0;
};

/// Latency summary over samples[skip..]. p95 uses the nearest-rank rule.
LatencyStats latency_stats(const std::vector<double>& samples_ms, std::size_t skip);

double median(std::vector<double> values);

}  // namespace hyperadapt
