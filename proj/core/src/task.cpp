// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/task.hpp"

#include <algorithm>
#include <cmath>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/ops.hpp"

namespace hyperadapt {

namespace {

// Gram-Schmidt on the columns of a Gaussian matrix: [n x k] with orthonormal columns.
std::vector<double> orthonormal_columns(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> m(n * k);
  for (auto& v : m) v = dist(rng);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t prev = 0; prev < j; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += m[i * k + j] * m[i * k + prev];
      for (std::size_t i = 0; i < n; ++i) m[i * k + j] -= dot * m[i * k + prev];
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += m[i * k + j] * m[i * k + j];
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) m[i * k + j] /= norm;
  }
  return m;
}

Tensor planted_increment(std::size_t d1, std::size_t d2, const TaskConfig& cfg, std::mt19937_64& rng) {
  const std::size_t k = cfg.true_rank;
  const auto u = orthonormal_columns(d1, k, rng);
  const auto v = orthonormal_columns(d2, k, rng);
  std::vector<double> delta(d1 * d2, 0.0);
  double s = cfg.signal;
  for (std::size_t j = 0; j < k; ++j, s *= cfg.signal_decay) {
    for (std::size_t a = 0; a < d1; ++a)
      for (std::size_t b = 0; b < d2; ++b) delta[a * d2 + b] += s * u[a * k + j] * v[b * k + j];
  }
  return Tensor::from({d1, d2}, std::move(delta));
}

Tensor gather_columns(const Tensor& m, const std::vector<std::size_t>& idx) {
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * idx.size());
  const auto v = m.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out[i * idx.size() + j] = v[i * c + idx[j]];
  return Tensor::from({r, idx.size()}, std::move(out));
}

}  // namespace

SyntheticTask::SyntheticTask(const TaskConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x7a5cu};
  std::mt19937_64 rng(seq);
  const std::size_t n = cfg.dataset_size;
  std::normal_distribution<double> unit(0.0, 1.0);

  if (cfg.variant == TaskVariant::LowRankRegression) {
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      base_.emplace_back(Tensor::randn({cfg.d1, cfg.d2}, 1.0 / std::sqrt(static_cast<double>(cfg.d2)), rng));
      planted_.push_back(planted_increment(cfg.d1, cfg.d2, cfg, rng));
    }
    inputs_ = Tensor::randn({cfg.d2, n}, 1.0, rng);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      Tensor w = add(base_[l].weight(), planted_[l]);
      Tensor y = matmul(w, inputs_);
      Tensor noise = Tensor::randn({cfg.d1, n}, cfg.noise, rng);
      targets_.push_back(add(y, noise).detach());
    }
    return;
  }

  // Classification: embeddings [d2 x vocab], layer0 d1 x d2, layer1 d1 x d1, head classes x d1.
  const Tensor embed = Tensor::randn({cfg.d2, cfg.vocab}, 1.0, rng);
  base_.emplace_back(Tensor::randn({cfg.d1, cfg.d2}, 1.0 / std::sqrt(static_cast<double>(cfg.d2)), rng));
  base_.emplace_back(Tensor::randn({cfg.d1, cfg.d1}, 1.0 / std::sqrt(static_cast<double>(cfg.d1)), rng));
  planted_.push_back(planted_increment(cfg.d1, cfg.d2, cfg, rng));
  planted_.push_back(planted_increment(cfg.d1, cfg.d1, cfg, rng));
  head_ = FrozenLinear(Tensor::randn({cfg.classes, cfg.d1}, 2.0 / std::sqrt(static_cast<double>(cfg.d1)), rng));

  std::uniform_int_distribution<std::size_t> tok(0, cfg.vocab - 1);
  std::vector<double> pooled(cfg.d2 * n, 0.0);
  const auto ev = embed.values();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t < cfg.seq_len; ++t) {
      const std::size_t id = tok(rng);
      for (std::size_t d = 0; d < cfg.d2; ++d) pooled[d * n + s] += ev[d * cfg.vocab + id];
    }
  }
  for (auto& v : pooled) v /= static_cast<double>(cfg.seq_len);
  inputs_ = Tensor::from({cfg.d2, n}, std::move(pooled));

  const FrozenLinear teacher0(add(base_[0].weight(), planted_[0]));
  const FrozenLinear teacher1(add(base_[1].weight(), planted_[1]));
  const Tensor logits = head_.forward(tanh(teacher1.forward(tanh(teacher0.forward(inputs_)))));
  labels_.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cfg.classes; ++c)
      if (logits.at(c, s) > logits.at(best, s)) best = c;
    labels_[s] = best;
  }
}

std::vector<std::string> SyntheticTask::adapter_ids() const {
  std::vector<std::string> ids;
  for (std::size_t l = 0; l < base_.size(); ++l) ids.push_back("layer" + std::to_string(l));
  return ids;
}

Batch SyntheticTask::gather(const std::vector<std::size_t>& idx) const {
  Batch b;
  b.indices = idx;
  b.x = gather_columns(inputs_, idx);
  for (const auto& t : targets_) b.targets.push_back(gather_columns(t, idx));
  if (!labels_.empty()) {
    for (auto i : idx) b.labels.push_back(labels_[i]);
  }
  return b;
}

Batch SyntheticTask::sample_batch(std::size_t batch_size, std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, cfg_.dataset_size - 1);
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = pick(rng);
  return gather(idx);
}

Batch SyntheticTask::full_batch() const {
  std::vector<std::size_t> idx(cfg_.dataset_size);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather(idx);
}

std::vector<Tensor> SyntheticTask::outputs(const LayerFn& layer, const Batch& batch) const {
  if (cfg_.variant == TaskVariant::LowRankRegression) {
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < base_.size(); ++l) out.push_back(layer(l, batch.x));
    return out;
  }
  Tensor h = tanh(layer(1, tanh(layer(0, batch.x))));
  return {transpose(head_.forward(h))};
}

Tensor SyntheticTask::loss(const std::vector<Tensor>& outputs, const Batch& batch) const {
  if (cfg_.variant == TaskVariant::LowRankRegression) {
    if (outputs.size() != batch.targets.size()) throw DimensionError("one output per regression layer expected");
    Tensor total;
    for (std::size_t l = 0; l < outputs.size(); ++l) {
      Tensor term = mse(outputs[l], batch.targets[l]);
      total = total.defined() ? add(total, term) : term;
    }
    // Squared error summed over output features, averaged over samples and layers.
    return scale(total, static_cast<double>(cfg_.d1) / static_cast<double>(outputs.size()));
  }
  return cross_entropy(outputs.front(), batch.labels);
}

LayerFn SyntheticTask::frozen_fn() const {
  return [this](std::size_t l, const Tensor& x) { return base_.at(l).forward(x); };
}

double SyntheticTask::reference_loss() const { return task_loss(frozen_fn(), full_batch()).item(); }

}  // namespace hyperadapt
