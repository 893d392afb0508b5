// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

double lr_at(long step, double lr_max, long warmup, long total) {
  if (total <= warmup) {
    throw ConfigError("total_steps", "must exceed warmup_steps (" + std::to_string(total) +
                                         " <= " + std::to_string(warmup) + ")");
  }
  if (step < 0 || step > total) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  if (step < warmup) return lr_max * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Adam::Adam(std::vector<Tensor> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    if (!p.is_leaf() || !p.requires_grad()) throw ContractError("Adam parameters must be trainable leaves");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t Adam::moment_entries() const { return 2 * param_entries(); }

std::size_t Adam::param_entries() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= f;
    }
  }
  return norm;
}

}  // namespace hyperadapt
