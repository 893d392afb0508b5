// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

/// Relative error between two gradient vectors:
/// ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2).
/// Falls back to the absolute difference when both norms are below 1e-8,
/// which covers inputs whose true gradient is identically zero.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Compares the reverse-mode gradient of `loss_fn` with central finite
/// differences for every entry of every tensor in `inputs` (which must be
/// leaves with requires_grad=true). `loss_fn` must rebuild the graph from the
/// current input values on each call. Returns the worst per-input relative
/// error. Input values are restored before returning.
double gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs, double h = 1e-5);

struct GradCheckCase {
  std::string name;
  /// Runs the check for one seed and returns its max relative error.
  std::function<double(unsigned seed)> run;
};

struct GradCheckRow {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Runs every case over seeds [0, seeds) and keeps the worst error per case.
std::vector<GradCheckRow> run_gradcheck_suite(const std::vector<GradCheckCase>& cases, unsigned seeds,
                                              double tolerance);

}  // namespace hyperadapt
