// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hyperadapt {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_csv_row(const StepMetrics& m, bool include_wall_ms) {
  std::ostringstream os;
  os << m.step << ',' << fmt(m.task_loss) << ',' << fmt(m.orth_penalty_value) << ',' << fmt(m.total_loss) << ','
     << fmt(m.lr) << ',' << m.effective_rank_total << ',' << fmt(include_wall_ms ? m.wall_clock_ms : 0.0) << ','
     << m.peak_param_bytes;
  return os.str();
}

void write_metrics_csv(std::ostream& os, const std::vector<StepMetrics>& rows, bool include_wall_ms) {
  os << kMetricsCsvHeader << '\n';
  for (const auto& r : rows) os << metrics_csv_row(r, include_wall_ms) << '\n';
}

std::vector<StepMetrics> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsCsvHeader) throw std::runtime_error("unexpected metrics CSV header");
  std::vector<StepMetrics> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw std::runtime_error("malformed metrics row: " + line);
    StepMetrics m;
    std::size_t pos = 0;
    auto parse_int = [&](const std::string& s) {
      const long v = std::stol(s, &pos);
      if (pos != s.size()) throw std::runtime_error("bad integer cell '" + s + "'");
      return v;
    };
    auto parse_double = [&](const std::string& s) {
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::runtime_error("bad float cell '" + s + "'");
      return v;
    };
    m.step = parse_int(cells[0]);
    m.task_loss = parse_double(cells[1]);
    m.orth_penalty_value = parse_double(cells[2]);
    m.total_loss = parse_double(cells[3]);
    m.lr = parse_double(cells[4]);
    m.effective_rank_total = static_cast<std::size_t>(parse_int(cells[5]));
    m.wall_clock_ms = parse_double(cells[6]);
    m.peak_param_bytes = static_cast<std::size_t>(parse_int(cells[7]));
    rows.push_back(m);
  }
  return rows;
}

std::vector<double> smooth(const std::vector<double>& values, std::size_t window) {
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < values.size(); ++t) {
    acc += values[t];
    if (t >= window) acc -= values[t - window];
    out[t] = acc / static_cast<double>(std::min(t + 1, window));
  }
  return out;
}

std::optional<long> steps_to_threshold(const std::vector<double>& losses, double threshold, std::size_t window) {
  const auto s = smooth(losses, window);
  for (std::size_t t = 0; t < s.size(); ++t) {
    if (s[t] <= threshold) return static_cast<long>(t);
  }
  return std::nullopt;
}

LatencyStats latency_stats(const std::vector<double>& samples_ms, std::size_t skip) {
  LatencyStats st;
  if (samples_ms.size() <= skip) return st;
  std::vector<double> v(samples_ms.begin() + static_cast<long>(skip), samples_ms.end());
  st.samples = v.size();
  double sum = 0.0;
  for (double x : v) sum += x;
  st.mean_ms = sum / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - st.mean_ms) * (x - st.mean_ms);
  var /= static_cast<double>(v.size());
  st.cv = st.mean_ms > 0.0 ? std::sqrt(var) / st.mean_ms : 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size())));
  st.p95_ms = v[std::max<std::size_t>(rank, 1) - 1];
  return st;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace hyperadapt
