// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/trainer.hpp"

namespace hyperadapt {

namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  os << j.dump(2) << '\n';
}

std::string fmt_double(double v) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json optional_steps(const std::optional<long>& s) {
  return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

fs::path make_run_dir(const fs::path& root, const std::string& tag) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-' << tag;
  fs::create_directories(root);
  fs::path dir = root / name.str();
  for (int i = 1; fs::exists(dir); ++i) dir = root / (name.str() + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

double absolute_threshold(const TrainConfig& cfg) {
  const SyntheticTask task(cfg.task, cfg.task.has_seed ? cfg.task.seed : cfg.seed);
  return cfg.threshold * task.reference_loss();
}

RunResult execute_run(const TrainConfig& cfg, const fs::path& dir) {
  RunResult r;
  r.dir = dir;
  fs::create_directories(dir);
  write_json(dir / "config.resolved.json", config_to_json(cfg));

  Trainer trainer(cfg);
  r.threshold = cfg.threshold * trainer.task().reference_loss();

  std::ofstream csv(dir / "metrics.csv");
  csv << kMetricsCsvHeader << '\n';
  try {
    trainer.run([&](const StepMetrics& m) {
      r.metrics.push_back(m);
      csv << metrics_csv_row(m, cfg.record_wall_ms) << '\n';
    });
  } catch (const TrainingAborted& e) {
    r.aborted = true;
    r.error = e.what();
    std::ofstream(dir / "error.txt") << r.error << '\n';
  }
  csv.close();

  r.prune_events = trainer.prune_events();
  std::ofstream events(dir / "prune_events.jsonl");
  for (const auto& ev : r.prune_events) events << prune_event_json(ev).dump() << '\n';

  std::vector<double> losses, walls;
  for (const auto& m : r.metrics) {
    losses.push_back(m.task_loss);
    walls.push_back(m.wall_clock_ms);
  }
  if (!r.aborted) r.steps_to_threshold = steps_to_threshold(losses, r.threshold, cfg.smoothing_window);
  r.latency = latency_stats(walls, std::min<std::size_t>(10, walls.empty() ? 0 : walls.size() - 1));
  r.peak_param_bytes = trainer.parameter_bytes();

  if (cfg.save_checkpoint && !r.aborted) trainer.checkpoint().save(dir / "checkpoint.hakv");
  write_json(dir / "report.json", run_report_json(cfg, r));
  return r;
}

nlohmann::json run_report_json(const TrainConfig& cfg, const RunResult& r) {
  nlohmann::json j;
  j["mode"] = mode_name(cfg.mode);
  if (is_hyper(cfg.mode)) j["backend"] = backend_name(cfg.hyper.backend);
  j["seed"] = cfg.seed;
  j["steps"] = r.metrics.size();
  j["status"] = r.aborted ? "aborted" : "ok";
  j["threshold"] = r.threshold;
  j["steps_to_threshold"] = optional_steps(r.steps_to_threshold);
  j["final_task_loss"] = r.metrics.empty() ? nlohmann::json(nullptr) : finite_or_null(r.metrics.back().task_loss);
  j["final_effective_rank"] = r.metrics.empty() ? 0 : r.metrics.back().effective_rank_total;
  j["prune_events"] = r.prune_events.size();
  j["latency_ms"] = {{"mean", r.latency.mean_ms}, {"p95", r.latency.p95_ms}, {"cv", r.latency.cv},
                     {"samples", r.latency.samples}};
  j["peak_param_bytes"] = r.peak_param_bytes;
  j["metrics_csv"] = (r.dir / "metrics.csv").string();
  return j;
}

ModeSpec parse_mode_spec(std::string_view text) {
  ModeSpec spec;
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  spec.mode = head == "hyper" ? Mode::HyperAdaLora : parse_mode(head);
  if (colon != std::string_view::npos) {
    if (!is_hyper(spec.mode)) throw ConfigError("modes", "backend given for non-hyper mode '" + std::string(text) + "'");
    spec.backend = parse_backend(text.substr(colon + 1));
  }
  spec.label = std::string(mode_name(spec.mode));
  if (spec.backend) spec.label += "-" + std::string(backend_name(*spec.backend));
  return spec;
}

std::vector<ModeSpec> parse_mode_list(std::string_view csv) {
  std::vector<ModeSpec> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const auto comma = csv.find(',', pos);
    const auto item = csv.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    if (item.empty()) throw ConfigError("modes", "empty entry in mode list");
    out.push_back(parse_mode_spec(item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (out[i].label == out[j].label) throw ConfigError("modes", "duplicate mode '" + out[i].label + "'");
  return out;
}

TrainConfig apply_mode(const TrainConfig& base, const ModeSpec& spec) {
  TrainConfig cfg = base;
  cfg.mode = spec.mode;
  if (spec.backend) cfg.hyper.backend = *spec.backend;
  validate(cfg);
  return cfg;
}

CompareReport run_compare(const TrainConfig& base, const std::vector<ModeSpec>& modes, const CompareOptions& opts,
                          const fs::path& dir) {
  if (modes.size() < 2) throw ConfigError("modes", "compare needs at least two modes");
  if (opts.seeds < 3) throw ConfigError("seeds", "compare needs at least three seeds");

  CompareReport rep;
  rep.dir = dir;
  rep.results.assign(modes.size(), std::vector<RunResult>(opts.seeds));

  std::vector<TrainConfig> mode_cfgs;
  for (const auto& m : modes) {
    TrainConfig cfg = apply_mode(base, m);
    if (opts.threshold) cfg.threshold = *opts.threshold;
    mode_cfgs.push_back(cfg);
  }

  struct Cell {
    std::size_t mode, seed;
  };
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < opts.seeds; ++s)
    for (std::size_t m = 0; m < modes.size(); ++m) cells.push_back({m, s});

  auto run_cell = [&](const Cell& c) {
    TrainConfig cfg = mode_cfgs[c.mode];
    cfg.seed = base.seed + c.seed;
    const fs::path cell_dir = dir / "cells" / modes[c.mode].label / ("seed" + std::to_string(cfg.seed));
    try {
      rep.results[c.mode][c.seed] = execute_run(cfg, cell_dir);
    } catch (const std::exception& e) {
      RunResult r;
      r.dir = cell_dir;
      r.aborted = true;
      r.error = e.what();
      rep.results[c.mode][c.seed] = std::move(r);
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.parallel, cells.size()));
  if (workers == 1) {
    for (const auto& c : cells) run_cell(c);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::future<void>> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.push_back(std::async(std::launch::async, [&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= cells.size()) return;
            i = next++;
          }
          run_cell(cells[i]);
        }
      }));
    }
    for (auto& f : pool) f.get();
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < modes.size(); ++m) {
    CompareRow row;
    row.label = modes[m].label;
    std::vector<double> steps, means, p95s;
    for (const auto& r : rep.results[m]) {
      ++row.runs;
      if (r.aborted) {
        ++row.failed;
        steps.push_back(inf);
        continue;
      }
      if (r.steps_to_threshold) ++row.reached;
      steps.push_back(r.steps_to_threshold ? static_cast<double>(*r.steps_to_threshold) : inf);
      means.push_back(r.latency.mean_ms);
      p95s.push_back(r.latency.p95_ms);
      row.peak_param_bytes = std::max(row.peak_param_bytes, r.peak_param_bytes);
    }
    row.median_steps = median(steps);
    row.latency_mean_ms = means.empty() ? 0.0 : median(means);
    row.latency_p95_ms = p95s.empty() ? 0.0 : median(p95s);
    if (row.failed) rep.any_failed = true;
    rep.rows.push_back(row);
  }
  for (auto& row : rep.rows) row.ratio = row.median_steps / rep.rows.front().median_steps;

  // Aligned curves: smoothed task loss, one row per step.
  fs::create_directories(dir / "curves");
  long max_steps = 0;
  for (const auto& mode_results : rep.results)
    for (const auto& r : mode_results) max_steps = std::max<long>(max_steps, static_cast<long>(r.metrics.size()));
  std::vector<std::vector<double>> mode_medians(modes.size());
  for (std::size_t m = 0; m < modes.size(); ++m) {
    std::vector<std::vector<double>> smoothed;
    for (const auto& r : rep.results[m]) {
      std::vector<double> losses;
      for (const auto& s : r.metrics) losses.push_back(s.task_loss);
      smoothed.push_back(smooth(losses, base.smoothing_window));
    }
    std::ofstream os(dir / "curves" / (modes[m].label + ".csv"));
    os << "step";
    for (std::size_t s = 0; s < opts.seeds; ++s) os << ",seed" << base.seed + s;
    os << '\n';
    for (long t = 0; t < max_steps; ++t) {
      os << t;
      std::vector<double> column;
      for (const auto& sm : smoothed) {
        os << ',';
        if (static_cast<std::size_t>(t) < sm.size()) {
          os << fmt_double(sm[t]);
          column.push_back(sm[t]);
        }
      }
      os << '\n';
      mode_medians[m].push_back(column.empty() ? std::nan("") : median(column));
    }
  }
  std::ofstream med(dir / "curves" / "median.csv");
  med << "step";
  for (const auto& m : modes) med << ',' << m.label;
  med << '\n';
  for (long t = 0; t < max_steps; ++t) {
    med << t;
    for (const auto& col : mode_medians) med << ',' << (std::isnan(col[t]) ? std::string() : fmt_double(col[t]));
    med << '\n';
  }

  std::ofstream summary(dir / "summary.csv");
  summary << "mode,runs,failed,reached,median_steps_to_threshold,ratio_vs_baseline,latency_mean_ms,latency_p95_ms,"
             "peak_param_bytes\n";
  for (const auto& row : rep.rows) {
    summary << row.label << ',' << row.runs << ',' << row.failed << ',' << row.reached << ','
            << fmt_double(row.median_steps) << ',' << fmt_double(row.ratio) << ',' << fmt_double(row.latency_mean_ms)
            << ',' << fmt_double(row.latency_p95_ms) << ',' << row.peak_param_bytes << '\n';
  }
  write_json(dir / "report.json", compare_report_json(rep));
  return rep;
}

nlohmann::json compare_report_json(const CompareReport& rep) {
  nlohmann::json j;
  j["baseline"] = rep.rows.empty() ? "" : rep.rows.front().label;
  j["rows"] = nlohmann::json::array();
  for (std::size_t m = 0; m < rep.rows.size(); ++m) {
    const auto& row = rep.rows[m];
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& r : rep.results[m]) {
      cells.push_back({{"dir", r.dir.string()},
                       {"status", r.aborted ? "failed" : "ok"},
                       {"steps_to_threshold", optional_steps(r.steps_to_threshold)},
                       {"error", r.error}});
    }
    j["rows"].push_back({{"mode", row.label},
                         {"runs", row.runs},
                         {"failed", row.failed},
                         {"reached", row.reached},
                         {"median_steps_to_threshold", finite_or_null(row.median_steps)},
                         {"ratio_vs_baseline", finite_or_null(row.ratio)},
                         {"latency_ms", {{"mean", row.latency_mean_ms}, {"p95", row.latency_p95_ms}}},
                         {"peak_param_bytes", row.peak_param_bytes},
                         {"cells", cells}});
  }
  j["any_failed"] = rep.any_failed;
  return j;
}

std::string format_compare_table(const CompareReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(26) << "mode" << std::right << std::setw(8) << "reached" << std::setw(14)
     << "median_steps" << std::setw(10) << "ratio" << std::setw(12) << "mean_ms" << std::setw(12) << "p95_ms"
     << std::setw(14) << "param_bytes" << '\n';
  for (const auto& row : rep.rows) {
    os << std::left << std::setw(26) << row.label << std::right << std::setw(8)
       << (std::to_string(row.reached) + "/" + std::to_string(row.runs)) << std::setw(14)
       << (std::isfinite(row.median_steps) ? fmt_double(row.median_steps) : "not reached") << std::setw(10)
       << std::fixed << std::setprecision(3) << row.ratio << std::setw(12) << row.latency_mean_ms << std::setw(12)
       << row.latency_p95_ms << std::setw(14) << row.peak_param_bytes << std::defaultfloat << '\n';
    if (row.failed) os << "  " << row.failed << " cell(s) failed\n";
  }
  return os.str();
}

StepCostRecord measure_step_cost(const TrainConfig& base, long steps) {
  TrainConfig cfg = base;
  steps = std::max<long>(steps, 110);
  if (cfg.total_steps < steps) {
    cfg.total_steps = steps;
    cfg.warmup_steps = std::min(cfg.warmup_steps, steps - 1);
    cfg.prune.end_step = std::min<long>(cfg.prune.end_step, steps);
  }
  Trainer trainer(cfg);
  std::vector<double> walls;
  for (long s = 0; s < steps; ++s) {
    const Batch batch = trainer.next_batch();
    walls.push_back(trainer.train_step(batch, s).wall_clock_ms);
  }
  StepCostRecord rec;
  rec.latency = latency_stats(walls, 10);
  rec.peak_param_bytes = trainer.parameter_bytes();
  for (const auto& t : trainer.trainable_parameters()) rec.trainable_entries += t.numel();
  for (const auto& t : trainer.adapter_buffers()) rec.adapter_entries += t.numel();
  rec.moment_entries = 2 * rec.trainable_entries;
  for (const auto& b : trainer.task().base_layers())
    rec.frozen_entries += b.weight().numel() + (b.has_bias() ? b.bias().numel() : 0);
  return rec;
}

nlohmann::json step_cost_json(const StepCostRecord& rec) {
  return {{"latency_ms",
           {{"mean", rec.latency.mean_ms},
            {"p95", rec.latency.p95_ms},
            {"cv", rec.latency.cv},
            {"samples", rec.latency.samples}}},
          {"peak_param_bytes", rec.peak_param_bytes},
          {"entries",
           {{"frozen", rec.frozen_entries},
            {"adapter", rec.adapter_entries},
            {"trainable", rec.trainable_entries},
            {"moments", rec.moment_entries}}}};
}

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(34) << "case" << std::right << std::setw(16) << "max_rel_error" << "  status\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(34) << r.name << std::right << std::setw(16) << std::scientific
       << std::setprecision(3) << r.max_rel_error << std::defaultfloat << "  " << (r.passed ? "ok" : "FAIL") << '\n';
  }
  return os.str();
}

}  // namespace hyperadapt
