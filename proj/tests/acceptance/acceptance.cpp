// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: one PASS/FAIL line per criterion. Run with no arguments for
// all of them, or with criterion numbers to run a subset.
//   hyperadapt_acceptance [--work DIR] [N ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "hyperadapt/adapters.hpp"
#include "hyperadapt/config.hpp"
#include "hyperadapt/gradcheck.hpp"
#include "hyperadapt/harness.hpp"
#include "hyperadapt/hypernet.hpp"
#include "hyperadapt/ops.hpp"
#include "hyperadapt/optim.hpp"
#include "hyperadapt/rank_allocator.hpp"
#include "hyperadapt/trainer.hpp"

namespace fs = std::filesystem;
using namespace hyperadapt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.values();
  const auto y = b.values();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<TrainConfig> every_mode_and_backend() {
  std::vector<TrainConfig> out;
  for (Mode m : {Mode::Lora, Mode::AdaLora}) {
    TrainConfig c;
    c.mode = m;
    out.push_back(c);
  }
  for (Mode m : {Mode::HyperLora, Mode::HyperAdaLora}) {
    for (BackendKind b : {BackendKind::Attention, BackendKind::Mlp, BackendKind::Conv}) {
      TrainConfig c;
      c.mode = m;
      c.hyper.backend = b;
      out.push_back(c);
    }
  }
  return out;
}

std::string label(const TrainConfig& c) {
  std::string s(mode_name(c.mode));
  if (is_hyper(c.mode)) s += ":" + std::string(backend_name(c.hyper.backend));
  return s;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto rows = run_gradcheck_suite(standard_gradcheck_cases(), 20, 1e-4);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  std::size_t failed = 0;
  for (const auto& r : rows) {
    if (!r.passed) ++failed;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  Outcome o;
  o.pass = failed == 0 && secs < 120.0;
  o.detail = std::to_string(rows.size()) + " cases x 20 seeds, " + std::to_string(failed) + " failed, worst " +
             fmt("%.2e", worst) + " (" + worst_name + "), " + fmt("%.1f", secs) + " s";
  return o;
}

Outcome zero_start() {
  std::size_t ok = 0;
  std::string bad;
  const auto configs = every_mode_and_backend();
  for (auto cfg : configs) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      cfg.seed = seed;
      Trainer tr(cfg);
      const Batch batch = tr.next_batch();
      const auto got = tr.current_outputs(batch);
      const auto want = tr.frozen_outputs(batch);
      bool same = got.size() == want.size();
      for (std::size_t i = 0; same && i < got.size(); ++i) same = bitwise_equal(got[i], want[i]);
      if (same) {
        ++ok;
      } else {
        bad += " " + label(cfg) + "/seed" + std::to_string(seed);
      }
    }
  }
  const std::size_t total = configs.size() * 3;
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " mode/backend/seed cells bitwise equal" +
                           (bad.empty() ? "" : "; mismatches:" + bad)};
}

// Reference selection: repeatedly scan for the smallest remaining
// (score, adapter_id, index) triple.
std::vector<PruneTarget> brute_force_prune(const std::vector<LambdaObservation>& obs, std::size_t k) {
  std::vector<std::tuple<double, std::string, std::size_t>> pool;
  for (const auto& o : obs) {
    for (std::size_t j = 0; j < o.sigma.size(); ++j) {
      if (!o.mask[j]) continue;
      pool.emplace_back(std::fabs(o.sigma[j] * (*o.grad)[j]), o.adapter_id, j);
    }
  }
  std::vector<PruneTarget> out;
  std::vector<bool> taken(pool.size(), false);
  for (std::size_t n = 0; n < std::min(k, pool.size()); ++n) {
    std::size_t best = pool.size();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (taken[i]) continue;
      if (best == pool.size() || pool[i] < pool[best]) best = i;
    }
    taken[best] = true;
    out.push_back({std::get<1>(pool[best]), std::get<2>(pool[best]), std::get<0>(pool[best])});
  }
  std::sort(out.begin(), out.end(), [](const PruneTarget& a, const PruneTarget& b) {
    return std::tie(a.adapter_id, a.index) < std::tie(b.adapter_id, b.index);
  });
  return out;
}

Outcome pruning_oracle() {
  std::mt19937_64 rng(2024);
  const int states = 200;
  int matched = 0;
  int with_ties = 0;
  for (int s = 0; s < states; ++s) {
    const std::size_t adapters = 1 + rng() % 4;
    const bool coarse = s % 2 == 0;  // small value alphabet forces ties
    std::vector<LambdaObservation> obs;
    std::size_t live = 0;
    for (std::size_t a = 0; a < adapters; ++a) {
      const std::size_t r = 1 + rng() % 6;
      LambdaObservation o;
      o.adapter_id = "layer" + std::to_string(adapters - a);
      o.grad = std::vector<double>(r);
      for (std::size_t j = 0; j < r; ++j) {
        std::normal_distribution<double> n(0.0, 1.0);
        const double sg = coarse ? static_cast<double>(static_cast<int>(rng() % 5) - 2) * 0.5 : n(rng);
        const double gg = coarse ? static_cast<double>(static_cast<int>(rng() % 3) - 1) : n(rng);
        o.sigma.push_back(sg);
        (*o.grad)[j] = gg;
        const bool alive = rng() % 4 != 0;
        o.mask.push_back(alive);
        if (alive) ++live;
      }
      obs.push_back(std::move(o));
    }
    const std::size_t k = 1 + rng() % std::max<std::size_t>(live + 1, 1);
    const auto want = brute_force_prune(obs, k);
    const auto got = select_prune(collect_scores(obs), k);
    std::set<double> seen;
    bool tie = false;
    for (const auto& o : obs)
      for (std::size_t j = 0; j < o.sigma.size(); ++j)
        if (o.mask[j] && !seen.insert(std::fabs(o.sigma[j] * (*o.grad)[j])).second) tie = true;
    if (tie) ++with_ties;
    if (got == want) ++matched;
  }
  return {matched == states, std::to_string(matched) + "/" + std::to_string(states) + " random states match (" +
                                 std::to_string(with_ties) + " with tied scores)"};
}

// Rank by Gaussian elimination with partial pivoting; entries below
// tol * max|entry| count as zero.
std::size_t numerical_rank(const Tensor& m, double tol = 1e-9) {
  const std::size_t rows = m.rows(), cols = m.cols();
  std::vector<double> a(m.values().begin(), m.values().end());
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::fabs(v));
  if (scale == 0.0) return 0;
  std::size_t rank = 0;
  for (std::size_t c = 0; c < cols && rank < rows; ++c) {
    std::size_t piv = rank;
    for (std::size_t r = rank + 1; r < rows; ++r)
      if (std::fabs(a[r * cols + c]) > std::fabs(a[piv * cols + c])) piv = r;
    if (std::fabs(a[piv * cols + c]) <= tol * scale) continue;
    for (std::size_t j = 0; j < cols; ++j) std::swap(a[piv * cols + j], a[rank * cols + j]);
    for (std::size_t r = rank + 1; r < rows; ++r) {
      const double f = a[r * cols + c] / a[rank * cols + c];
      for (std::size_t j = c; j < cols; ++j) a[r * cols + j] -= f * a[rank * cols + j];
    }
    ++rank;
  }
  return rank;
}

Outcome rank_accounting() {
  const auto t0 = Clock::now();
  std::size_t events_checked = 0;
  std::string problem;
  for (Mode mode : {Mode::AdaLora, Mode::HyperAdaLora}) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.task.num_layers = 4;
    cfg.task.d1 = 24;
    cfg.task.d2 = 20;
    cfg.rank = 6;
    cfg.total_steps = 120;
    cfg.warmup_steps = 5;
    cfg.prune.delta_t = 5;
    cfg.prune.k = 2;
    cfg.prune.start_step = 0;
    cfg.prune.end_step = 100;
    cfg.prune.target_rank = 0;
    validate(cfg);
    Trainer tr(cfg);
    const std::size_t r_total = cfg.task.num_layers * cfg.rank;
    std::size_t unclamped = 0;
    std::size_t seen = 0;
    for (long s = 0; s < cfg.total_steps; ++s) {
      tr.train_step(tr.next_batch(), s);
      if (tr.prune_events().size() == seen) continue;
      seen = tr.prune_events().size();
      const auto& ev = tr.prune_events().back();
      if (ev.clamped) break;
      ++unclamped;
      ++events_checked;
      const std::size_t expect = r_total - unclamped * cfg.prune.k;
      if (ev.remaining_rank != expect || tr.effective_rank_total() != expect) {
        problem += " " + std::string(mode_name(mode)) + "@" + std::to_string(s) + ": rank " +
                   std::to_string(tr.effective_rank_total()) + " != " + std::to_string(expect);
      }
      for (const auto& a : tr.svd_adapters()) {
        const std::size_t nr = numerical_rank(effective_delta_w(a));
        if (nr > a.effective_rank()) {
          problem += " " + a.id() + " numerical rank " + std::to_string(nr) + " > mask " +
                     std::to_string(a.effective_rank());
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {problem.empty() && events_checked > 0 && secs < 60.0,
          std::to_string(events_checked) + " un-clamped events checked in " + fmt("%.1f", secs) + " s" +
              (problem.empty() ? "" : ";" + problem)};
}

Outcome orthogonality_trend() {
  std::string detail;
  bool pass = true;
  for (Mode mode : {Mode::AdaLora, Mode::HyperAdaLora}) {
    int improved = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      TrainConfig cfg;
      cfg.mode = mode;
      cfg.seed = seed;
      cfg.gamma = 0.1;
      Trainer tr(cfg);
      const auto metrics = tr.run();
      const std::size_t n = metrics.size();
      const std::size_t tenth = std::max<std::size_t>(n / 10, 1);
      double first = 0.0, last = 0.0;
      for (std::size_t i = 0; i < tenth; ++i) {
        first += metrics[i].orth_penalty_value;
        last += metrics[n - 1 - i].orth_penalty_value;
      }
      if (last < first) ++improved;
    }
    pass = pass && improved >= 4;
    detail += std::string(detail.empty() ? "" : ", ") + std::string(mode_name(mode)) + " " +
              std::to_string(improved) + "/5 seeds";
  }
  return {pass, "final-10% mean penalty below first-10% mean: " + detail};
}

Outcome attention_oracle() {
  // Two tokens of width 2, one head, identity-free hand-set projections.
  const Tensor x = Tensor::from({2, 2}, {0.3, -1.2, 0.8, 0.5});
  AttentionProjections proj;
  proj.wq = Tensor::from({2, 2}, {0.5, -0.4, 0.9, 0.1});
  proj.wk = Tensor::from({2, 2}, {-0.3, 0.7, 0.2, 0.6});
  proj.wv = Tensor::from({2, 2}, {1.1, 0.0, -0.5, 0.8});
  const Tensor got = multi_head_attention(x, proj, 1);

  auto row_times = [](const double* r, const Tensor& w, std::size_t c) { return r[0] * w.at(0, c) + r[1] * w.at(1, c); };
  double q[2][2], k[2][2], v[2][2];
  const auto xv = x.values();
  for (int i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      q[i][c] = row_times(&xv[2 * i], proj.wq, c);
      k[i][c] = row_times(&xv[2 * i], proj.wk, c);
      v[i][c] = row_times(&xv[2 * i], proj.wv, c);
    }
  double worst = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) / std::sqrt(2.0);
    const double s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) / std::sqrt(2.0);
    const double e0 = std::exp(s0), e1 = std::exp(s1);
    const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    for (int c = 0; c < 2; ++c)
      worst = std::max(worst, std::fabs(got.at(i, c) - (w0 * v[0][c] + w1 * v[1][c])));
  }

  // Singleton: softmax over one key is 1, so the output is the value row.
  std::mt19937_64 rng(3);
  HyperConfig hc;
  auto backbone = make_backbone(hc, rng);
  auto& attn = dynamic_cast<AttentionBackbone&>(*backbone);
  const Tensor one = Tensor::randn({1, hc.hidden}, 1.0, rng);
  const auto& p = attn.projections();
  const Tensor single = multi_head_attention(one, p, hc.heads);
  Tensor value = matmul(one, p.wv);
  if (p.bv.defined()) value = add_row_vector(value, p.bv);
  const bool singleton_exact = bitwise_equal(single, value);

  // Identical tokens produce identical rows, through attention and the full
  // encoder layer alike.
  const Tensor row = Tensor::randn({1, hc.hidden}, 1.0, rng);
  const Tensor twin = concat_cols({transpose(row), transpose(row)});
  const Tensor pair = transpose(twin);
  auto rows_equal = [](const Tensor& t) {
    const auto v = t.values();
    return std::memcmp(v.data(), v.data() + t.cols(), t.cols() * sizeof(double)) == 0;
  };
  const bool twins_exact = rows_equal(multi_head_attention(pair, p, hc.heads)) && rows_equal(attn.forward(pair));

  return {worst < 1e-10 && singleton_exact && twins_exact,
          "2-token max abs error " + fmt("%.2e", worst) + ", singleton " + (singleton_exact ? "exact" : "MISMATCH") +
              ", identical tokens " + (twins_exact ? "exact" : "MISMATCH")};
}

Outcome gradient_routing() {
  std::size_t ok = 0, total = 0;
  std::string bad;
  for (auto cfg : every_mode_and_backend()) {
    if (!is_hyper(cfg.mode)) continue;
    Trainer tr(cfg);
    for (long s = 0; s < 3; ++s) {
      ++total;
      const StepMetrics m = tr.train_step(tr.next_batch(), s);
      bool buffers_clean = true;
      for (const auto& b : tr.adapter_buffers()) {
        if (!b.has_grad()) continue;
        for (double g : b.grad()) buffers_clean = buffers_clean && g == 0.0;
      }
      bool phi_live = false;
      for (const auto& t : tr.trainable_parameters()) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) phi_live = phi_live || g != 0.0;
      }
      if (buffers_clean && phi_live && m.task_loss > 0.0) {
        ++ok;
      } else {
        bad += " " + label(cfg) + "@" + std::to_string(s);
      }
    }
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) +
                           " hyper steps with gradient-free buffers and non-zero Φ gradient" +
                           (bad.empty() ? "" : "; failing:" + bad)};
}

Outcome convergence(const fs::path& work) {
  const auto t0 = Clock::now();
  TrainConfig base;
  const auto modes = parse_mode_list("adalora,hyper_adalora,lora,hyper_lora");
  CompareOptions opts;
  opts.seeds = 5;
  fs::remove_all(work / "c8");
  const CompareReport rep = run_compare(base, modes, opts, work / "c8");
  const double secs = seconds_since(t0);
  bool live = true;
  std::string detail;
  double ratio = 0.0;
  for (const auto& r : rep.rows) {
    live = live && r.reached == r.runs && r.failed == 0;
    detail += r.label + " " + std::to_string(r.reached) + "/" + std::to_string(r.runs) + " median " +
              (std::isfinite(r.median_steps) ? fmt("%.0f", r.median_steps) : std::string("n/a")) + "; ";
    if (r.label == "hyper_adalora") ratio = r.ratio;
  }
  const bool bound = ratio <= 1.15;
  detail += "liveness " + std::string(live ? "ok" : "FAILED") + ", ratio hyper_adalora/adalora " + fmt("%.3f", ratio) +
            (bound ? " (<= 1.15)" : " (> 1.15 sanity bound)") + ", " + fmt("%.0f", secs) + " s";
  return {live && bound && secs < 900.0, detail};
}

Outcome ablation(const fs::path& work) {
  TrainConfig base;
  base.total_steps = 500;
  base.warmup_steps = 25;
  base.prune.end_step = 400;
  const auto modes = parse_mode_list("hyper:attention,hyper:mlp,hyper:conv");
  CompareOptions opts;
  opts.seeds = 3;
  fs::remove_all(work / "c9a");
  fs::remove_all(work / "c9b");
  const CompareReport a = run_compare(base, modes, opts, work / "c9a");
  const CompareReport b = run_compare(base, modes, opts, work / "c9b");

  bool shape_ok = a.rows.size() == 3 && !a.any_failed;
  std::size_t lines = 0;
  std::vector<fs::path> files;
  for (const auto& m : modes) {
    const fs::path curve = fs::path("curves") / (m.label + ".csv");
    files.push_back(curve);
    const std::string text = read_file(a.dir / curve);
    const auto n = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
    if (lines == 0) lines = n;
    shape_ok = shape_ok && n == lines && n == static_cast<std::size_t>(base.total_steps) + 1;
    for (std::size_t s = 0; s < opts.seeds; ++s)
      files.push_back(fs::path("cells") / m.label / ("seed" + std::to_string(base.seed + s)) / "metrics.csv");
  }
  files.push_back("curves/median.csv");
  std::size_t identical = 0;
  for (const auto& f : files)
    if (fs::exists(a.dir / f) && read_file(a.dir / f) == read_file(b.dir / f)) ++identical;
  const bool deterministic = identical == files.size();
  return {shape_ok && deterministic, std::to_string(a.rows.size()) + " rows, curves of " + std::to_string(lines) +
                                         " lines each, " + std::to_string(identical) + "/" +
                                         std::to_string(files.size()) + " CSVs identical on repeat"};
}

Outcome lr_schedule() {
  std::mt19937_64 rng(77);
  int ok = 0;
  std::string bad;
  for (int i = 0; i < 10; ++i) {
    const double lr_max = std::exp(std::uniform_real_distribution<double>(std::log(1e-6), std::log(1.0))(rng));
    const long warmup = 1 + static_cast<long>(rng() % 500);
    const long total = warmup + 10 + static_cast<long>(rng() % 5000);
    bool good = lr_at(0, lr_max, warmup, total) == 0.0 && lr_at(warmup, lr_max, warmup, total) == lr_max &&
                std::fabs(lr_at(total, lr_max, warmup, total)) <= 1e-15 * lr_max;
    for (long s = 1; good && s <= warmup; ++s)
      good = lr_at(s, lr_max, warmup, total) > lr_at(s - 1, lr_max, warmup, total);
    for (long s = warmup + 1; good && s <= total; ++s)
      good = lr_at(s, lr_max, warmup, total) < lr_at(s - 1, lr_max, warmup, total);
    if (good) {
      ++ok;
    } else {
      bad += " (lr_max=" + fmt("%.3g", lr_max) + ", warmup=" + std::to_string(warmup) +
             ", total=" + std::to_string(total) + ")";
    }
  }
  return {ok == 10, std::to_string(ok) + "/10 random schedules" + (bad.empty() ? "" : "; failing:" + bad)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "hyperadapt_acceptance";
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      selected.insert(std::stoi(arg));
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"zero-start identity", zero_start},
      {"pruning oracle equivalence", pruning_oracle},
      {"rank accounting", rank_accounting},
      {"orthogonality regularization effect", orthogonality_trend},
      {"attention-update correctness", attention_oracle},
      {"gradient-routing contract", gradient_routing},
      {"convergence comparison", [&] { return convergence(work); }},
      {"ablation structure", [&] { return ablation(work); }},
      {"lr schedule", lr_schedule},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && selected.count(id) == 0) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
