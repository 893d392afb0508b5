// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DimensionError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  diff = std::sqrt(diff);
  const double denom = std::max(std::sqrt(na), std::sqrt(nn));
  if (denom < 1e-8) return diff;
  return diff / denom;
}

double gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs, double h) {
  for (auto& t : inputs) {
    if (!t.is_leaf() || !t.requires_grad()) throw ContractError("gradcheck inputs must be leaves requiring grad");
    t.clear_grad();
  }
  backward(loss_fn());
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                : std::vector<double>(t.numel(), 0.0);
    std::vector<double> numeric(t.numel());
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double up = loss_fn().item();
      vals[i] = orig - h;
      const double down = loss_fn().item();
      vals[i] = orig;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

std::vector<GradCheckRow> run_gradcheck_suite(const std::vector<GradCheckCase>& cases, unsigned seeds,
                                              double tolerance) {
  std::vector<GradCheckRow> rows;
  rows.reserve(cases.size());
  for (const auto& c : cases) {
    GradCheckRow row{c.name, 0.0, true};
    for (unsigned s = 0; s < seeds; ++s) {
      const double err = c.run(s);
      if (!std::isfinite(err)) {
        row.max_rel_error = err;
        break;
      }
      row.max_rel_error = std::max(row.max_rel_error, err);
    }
    row.passed = std::isfinite(row.max_rel_error) && row.max_rel_error < tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace hyperadapt
