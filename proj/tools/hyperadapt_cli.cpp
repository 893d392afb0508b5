// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/harness.hpp"
#include "hyperadapt/trainer.hpp"

namespace fs = std::filesystem;
using namespace hyperadapt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAborted = 3;
constexpr int kExitCellFailed = 4;

struct Options {
  std::string config;
  std::string out = "runs";
  std::size_t seeds = 5;
  std::string modes;
  std::optional<double> threshold;
  std::size_t parallel = 1;
};

fs::path output_root(const Options& opt) {
  if (const char* env = std::getenv("HYPERADAPT_OUT"); env && *env) return env;
  return opt.out;
}

struct LoadedConfig {
  TrainConfig cfg;
  std::string raw;
};

LoadedConfig load(const Options& opt) {
  LoadedConfig lc;
  if (opt.config.empty()) {
    lc.cfg = config_from_json(nlohmann::json::object());
    lc.raw = config_to_json(lc.cfg).dump(2) + "\n";
  } else {
    std::ifstream is(opt.config, std::ios::binary);
    if (!is) throw ConfigError("config", "cannot read '" + opt.config + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    lc.raw = ss.str();
    lc.cfg = load_config(opt.config);
  }
  if (opt.threshold) {
    if (!(*opt.threshold > 0.0)) throw ConfigError("threshold", "must be positive");
    lc.cfg.threshold = *opt.threshold;
  }
  return lc;
}

fs::path start_dir(const Options& opt, const std::string& tag, const std::string& raw) {
  const fs::path dir = make_run_dir(output_root(opt), tag);
  std::ofstream(dir / "config.json", std::ios::binary) << raw;
  return dir;
}

int cmd_run(const Options& opt) {
  const LoadedConfig lc = load(opt);
  const fs::path dir = start_dir(opt, "run", lc.raw);
  const RunResult r = execute_run(lc.cfg, dir);
  if (r.aborted) {
    std::cerr << "run aborted: " << r.error << '\n';
    return kExitAborted;
  }
  std::cout << "run dir: " << dir.string() << '\n';
  std::cout << "steps: " << r.metrics.size() << "  final task_loss: " << r.metrics.back().task_loss
            << "  steps_to_threshold: "
            << (r.steps_to_threshold ? std::to_string(*r.steps_to_threshold) : std::string("not reached")) << '\n';
  return kExitOk;
}

int cmd_compare(const Options& opt) {
  const LoadedConfig lc = load(opt);
  const auto modes = parse_mode_list(opt.modes.empty() ? "adalora,hyper_adalora" : opt.modes);
  CompareOptions co;
  co.seeds = opt.seeds;
  co.parallel = opt.parallel;
  const fs::path dir = start_dir(opt, "compare", lc.raw);
  const CompareReport rep = run_compare(lc.cfg, modes, co, dir);
  std::cout << "compare dir: " << dir.string() << '\n' << format_compare_table(rep);
  if (rep.any_failed) {
    std::cerr << "one or more cells failed; see report.json\n";
    return kExitCellFailed;
  }
  return kExitOk;
}

int cmd_gradcheck(const Options& opt, unsigned seeds) {
  const auto rows = run_gradcheck_suite(standard_gradcheck_cases(), seeds, 1e-4);
  const std::string table = format_gradcheck_table(rows);
  std::cout << table;
  const fs::path dir = make_run_dir(output_root(opt), "gradcheck");
  std::ofstream(dir / "gradcheck.txt") << table;
  bool ok = true;
  for (const auto& r : rows) ok = ok && r.passed;
  std::cout << (ok ? "all cases passed\n" : "gradient check FAILED\n");
  return ok ? kExitOk : kExitFailure;
}

int cmd_measure(const Options& opt, long steps) {
  const LoadedConfig lc = load(opt);
  std::vector<ModeSpec> modes;
  if (opt.modes.empty()) {
    modes.push_back({lc.cfg.mode, std::nullopt, std::string(mode_name(lc.cfg.mode))});
  } else {
    modes = parse_mode_list(opt.modes);
  }
  const fs::path dir = start_dir(opt, "measure", lc.raw);
  nlohmann::json out = nlohmann::json::object();
  // Serial on purpose: concurrent cells would perturb each other's timings.
  for (const auto& m : modes) {
    const StepCostRecord rec = measure_step_cost(apply_mode(lc.cfg, m), steps);
    out[m.label] = step_cost_json(rec);
    std::cout << m.label << ": mean " << rec.latency.mean_ms << " ms, p95 " << rec.latency.p95_ms << " ms, cv "
              << rec.latency.cv << ", param bytes " << rec.peak_param_bytes << '\n';
  }
  std::ofstream(dir / "measure.json") << out.dump(2) << '\n';
  std::cout << "measure dir: " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperadapt: hypernetwork-generated low-rank adapters at desk scale"};
  app.require_subcommand(1);
  Options opt;
  unsigned grad_seeds = 20;
  long measure_steps = 110;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", opt.out, "Output root (HYPERADAPT_OUT takes precedence)");
  };
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--threshold", opt.threshold, "Loss threshold as a fraction of the frozen model's loss");
  };

  auto* run = app.add_subcommand("run", "Train one configuration");
  add_config(run);
  add_common(run);

  auto* compare = app.add_subcommand("compare", "Run every mode x seed cell and compare convergence");
  add_config(compare);
  add_common(compare);
  compare->add_option("--seeds", opt.seeds, "Seeds per mode")->check(CLI::PositiveNumber);
  compare->add_option("--modes", opt.modes, "Comma-separated modes, e.g. adalora,hyper:mlp");
  compare->add_option("--parallel", opt.parallel, "Concurrent cells")->check(CLI::PositiveNumber);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  add_common(gradcheck);
  gradcheck->add_option("--seeds", grad_seeds, "Seeds per case")->check(CLI::PositiveNumber);

  auto* measure = app.add_subcommand("measure", "Per-step latency and parameter memory");
  add_config(measure);
  add_common(measure);
  measure->add_option("--modes", opt.modes, "Comma-separated modes to measure serially");
  measure->add_option("--steps", measure_steps, "Timed steps (at least 110)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(opt);
    if (*compare) return cmd_compare(opt);
    if (*gradcheck) return cmd_gradcheck(opt, grad_seeds);
    if (*measure) return cmd_measure(opt, measure_steps);
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TrainingAborted& e) {
    std::cerr << "run aborted: " << e.what() << '\n';
    return kExitAborted;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
