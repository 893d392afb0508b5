// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/ops.hpp"

namespace hyperadapt {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream).
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void overwrite(Tensor& dst, std::span<const double> src) {
  auto v = dst.mutable_values();
  std::copy(src.begin(), src.end(), v.begin());
}

}  // namespace

double lr_at(long step, const TrainConfig& cfg) { return lr_at(step, cfg.lr_max, cfg.warmup_steps, cfg.total_steps); }

Tensor total_orth_penalty(const std::vector<SvdFactors>& factors) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& f : factors) total = add(total, orth_penalty(f.p, f.q));
  return total;
}

Tensor composite_loss(const Tensor& task_loss, const std::vector<SvdFactors>& factors, double gamma) {
  if (gamma < 0.0) throw ContractError("composite_loss: gamma must be non-negative");
  return add(task_loss, scale(total_orth_penalty(factors), gamma));
}

Trainer::Trainer(TrainConfig cfg)
    : Trainer(cfg, std::make_shared<SyntheticTask>(cfg.task, cfg.task.has_seed ? cfg.task.seed : cfg.seed)) {}

Trainer::Trainer(TrainConfig cfg, std::shared_ptr<const SyntheticTask> task)
    : cfg_(std::move(cfg)),
      task_(std::move(task)),
      init_rng_(derive_seed(cfg_.seed, 1)),
      batch_rng_(derive_seed(cfg_.seed, 2)) {
  validate(cfg_);
  init_params();
}

void Trainer::init_params() {
  const bool hyper = is_hyper(cfg_.mode);
  const bool svd = is_svd(cfg_.mode);
  const auto ids = task_->adapter_ids();
  const auto& base = task_->base_layers();
  for (std::size_t l = 0; l < base.size(); ++l) {
    const std::size_t d1 = base[l].out_dim(), d2 = base[l].in_dim();
    if (svd) {
      svd_.push_back(SvdAdapter::init(ids[l], d1, d2, cfg_.rank, cfg_.init_std, init_rng_));
      if (hyper) {
        auto& f = svd_.back().factors();
        f.p.set_requires_grad(false);
        f.lambda.set_requires_grad(false);
        f.q.set_requires_grad(false);
      }
    } else {
      lora_.push_back(LoraAdapter::init(d1, d2, cfg_.rank, cfg_.init_std, init_rng_));
      if (hyper) {
        lora_.back().factors().a.set_requires_grad(false);
        lora_.back().factors().b.set_requires_grad(false);
      }
    }
  }

  if (hyper) {
    const bool residual = cfg_.hyper.residual;
    // The role that produces the zero-initialised factor (lambda, or B for
    // LoRA) starts with a zero output projection so Delta W = 0 at step 0.
    h_p_ = std::make_unique<HyperNet>(HyperRole::P, cfg_.hyper, derive_seed(cfg_.seed, 10), !svd || residual);
    h_q_ = std::make_unique<HyperNet>(HyperRole::Q, cfg_.hyper, derive_seed(cfg_.seed, 12), residual);
    h_p_->register_shape(cfg_.rank);
    h_q_->register_shape(cfg_.rank);
    if (svd) {
      h_lambda_ = std::make_unique<HyperNet>(HyperRole::Lambda, cfg_.hyper, derive_seed(cfg_.seed, 11), true);
      h_lambda_->register_shape(1);
    }
  }
  optimizer_ = std::make_unique<Adam>(trainable_parameters());
}

const HyperNet* Trainer::hypernet(HyperRole role) const {
  switch (role) {
    case HyperRole::P: return h_p_.get();
    case HyperRole::Lambda: return h_lambda_.get();
    case HyperRole::Q: return h_q_.get();
  }
  return nullptr;
}

HyperNet* Trainer::hypernet(HyperRole role) {
  return const_cast<HyperNet*>(static_cast<const Trainer*>(this)->hypernet(role));
}

std::vector<Tensor> Trainer::trainable_parameters() const {
  std::vector<Tensor> out;
  if (is_hyper(cfg_.mode)) {
    for (const HyperNet* h : {h_p_.get(), h_lambda_.get(), h_q_.get()}) {
      if (!h) continue;
      for (const auto& [name, t] : h->parameters()) out.push_back(t);
    }
    return out;
  }
  return adapter_buffers();
}

std::vector<Tensor> Trainer::adapter_buffers() const {
  std::vector<Tensor> out;
  for (const auto& a : svd_) {
    out.push_back(a.factors().p);
    out.push_back(a.factors().lambda);
    out.push_back(a.factors().q);
  }
  for (const auto& a : lora_) {
    out.push_back(a.factors().a);
    out.push_back(a.factors().b);
  }
  return out;
}

std::vector<SvdFactors> Trainer::build_factors() const {
  std::vector<SvdFactors> out;
  const bool hyper = is_hyper(cfg_.mode);
  for (const auto& a : svd_) {
    const auto& f = a.factors();
    if (hyper) {
      out.push_back({h_p_->generate(f.p), h_lambda_->generate(f.lambda), h_q_->generate(f.q)});
    } else {
      out.push_back(f);
    }
  }
  // LoRA factors ride in the same struct: p carries B, q carries A.
  for (const auto& a : lora_) {
    const auto& f = a.factors();
    if (hyper) {
      out.push_back({h_p_->generate(f.b), Tensor(), h_q_->generate(f.a)});
    } else {
      out.push_back({f.b, Tensor(), f.a});
    }
  }
  return out;
}

LayerFn Trainer::layer_fn(const std::vector<SvdFactors>& factors) const {
  const auto& base = task_->base_layers();
  if (is_svd(cfg_.mode)) {
    return [this, &factors, &base](std::size_t l, const Tensor& x) {
      return svd_forward(base.at(l), factors.at(l), svd_.at(l).mask(), x);
    };
  }
  return [&factors, &base](std::size_t l, const Tensor& x) {
    return lora_forward(base.at(l), LoraFactors{factors.at(l).q, factors.at(l).p}, x);
  };
}

Batch Trainer::next_batch() { return task_->sample_batch(cfg_.batch_size, batch_rng_); }

std::vector<Tensor> Trainer::current_outputs(const Batch& batch) const {
  const auto factors = build_factors();
  return task_->outputs(layer_fn(factors), batch);
}

std::vector<Tensor> Trainer::frozen_outputs(const Batch& batch) const {
  return task_->outputs(task_->frozen_fn(), batch);
}

std::size_t Trainer::effective_rank_total() const {
  if (is_svd(cfg_.mode)) return total_effective_rank(svd_);
  std::size_t n = 0;
  for (const auto& a : lora_) n += a.rank();
  return n;
}

std::size_t Trainer::parameter_bytes() const {
  std::size_t entries = 0;
  for (const auto& b : task_->base_layers()) entries += b.weight().numel() + (b.has_bias() ? b.bias().numel() : 0);
  for (const auto& t : adapter_buffers()) entries += t.numel();
  if (is_hyper(cfg_.mode)) entries += optimizer_->param_entries();
  entries += optimizer_->moment_entries();
  return entries * sizeof(double);
}

std::string Trainer::dump_recent() const {
  std::ostringstream os;
  os << kMetricsCsvHeader << '\n';
  for (const auto& m : recent_) os << metrics_csv_row(m, true) << '\n';
  return os.str();
}

StepMetrics Trainer::train_step(const Batch& batch, long step) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool hyper = is_hyper(cfg_.mode);
  const bool svd = is_svd(cfg_.mode);
  const double lr = lr_at(step, cfg_) * (hyper ? cfg_.hyper.lr_scale : 1.0);

  last_factors_ = build_factors();
  const auto& factors = last_factors_;
  const Tensor task_loss = task_->task_loss(layer_fn(factors), batch);
  const Tensor penalty = svd ? total_orth_penalty(factors) : Tensor::scalar(0.0);
  const Tensor total = add(task_loss, scale(penalty, cfg_.gamma));

  StepMetrics m;
  m.step = step;
  m.task_loss = task_loss.item();
  m.orth_penalty_value = penalty.item();
  m.total_loss = total.item();
  m.lr = lr;

  if (!std::isfinite(m.total_loss)) {
    throw TrainingAborted("non-finite loss at step " + std::to_string(step) + " (task_loss=" +
                          std::to_string(m.task_loss) + ")\nlast metrics:\n" + dump_recent());
  }

  optimizer_->zero_grad();
  backward(total);
  if (cfg_.grad_clip > 0.0) {
    auto params = optimizer_->params();
    clip_grad_norm(params, cfg_.grad_clip);
  }

  // Importance inputs are taken at the values the gradient was computed for.
  const bool prune_now = svd && should_prune(step, cfg_.prune);
  std::vector<LambdaObservation> observations;
  if (prune_now) {
    for (std::size_t i = 0; i < svd_.size(); ++i) {
      const Tensor& lam = factors[i].lambda;
      LambdaObservation o{svd_[i].id(), lam.to_vector(), std::nullopt, svd_[i].mask()};
      if (lam.has_grad()) o.grad = std::vector<double>(lam.grad().begin(), lam.grad().end());
      observations.push_back(std::move(o));
    }
  }

  optimizer_->step(lr);

  if (hyper) {
    for (std::size_t i = 0; i < svd_.size(); ++i) {
      auto& f = svd_[i].factors();
      overwrite(f.p, factors[i].p.values());
      overwrite(f.q, factors[i].q.values());
      const auto gen = factors[i].lambda.values();
      const auto& mask = svd_[i].mask();
      auto lam = f.lambda.mutable_values();
      for (std::size_t j = 0; j < lam.size(); ++j) lam[j] = mask[j] ? gen[j] : 0.0;
    }
    for (std::size_t i = 0; i < lora_.size(); ++i) {
      auto& f = lora_[i].factors();
      overwrite(f.b, factors[svd_.size() + i].p.values());
      overwrite(f.a, factors[svd_.size() + i].q.values());
    }
  } else if (svd) {
    // Pruned singular values stay exactly zero despite residual Adam momentum.
    for (auto& a : svd_) {
      auto lam = a.factors().lambda.mutable_values();
      for (std::size_t j = 0; j < lam.size(); ++j)
        if (!a.mask()[j]) lam[j] = 0.0;
    }
  }

  if (prune_now) {
    bool clamped = false;
    const std::size_t budget = prune_budget(cfg_.prune, total_effective_rank(svd_), &clamped);
    if (clamped) ++clamp_count_;
    if (budget > 0) {
      PruneEvent ev;
      ev.step = step;
      ev.pruned = select_prune(collect_scores(observations), budget);
      apply_prune(svd_, ev.pruned, !hyper);
      ev.remaining_rank = total_effective_rank(svd_);
      ev.clamped = clamped;
      prune_events_.push_back(std::move(ev));
    }
  }

  m.effective_rank_total = effective_rank_total();
  m.peak_param_bytes = parameter_bytes();
  m.wall_clock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  recent_.push_back(m);
  if (recent_.size() > 10) recent_.pop_front();
  return m;
}

std::vector<StepMetrics> Trainer::run(const std::function<void(const StepMetrics&)>& on_step) {
  std::vector<StepMetrics> out;
  out.reserve(static_cast<std::size_t>(cfg_.total_steps));
  for (long step = 0; step < cfg_.total_steps; ++step) {
    const Batch batch = next_batch();
    out.push_back(train_step(batch, step));
    if (on_step) on_step(out.back());
  }
  return out;
}

KvCheckpoint Trainer::checkpoint() const {
  KvCheckpoint ck;
  nlohmann::json adapters = nlohmann::json::array();
  const auto& base = task_->base_layers();
  const auto ids = task_->adapter_ids();
  for (std::size_t l = 0; l < base.size(); ++l) {
    adapters.push_back({{"id", ids[l]}, {"d1", base[l].out_dim()}, {"d2", base[l].in_dim()}});
  }
  ck.header() = {{"format", "hyperadapt-kv"},
                 {"mode", mode_name(cfg_.mode)},
                 {"r", cfg_.rank},
                 {"d1", base.front().out_dim()},
                 {"d2", base.front().in_dim()},
                 {"adapters", adapters}};
  if (is_hyper(cfg_.mode)) ck.header()["backend"] = backend_name(cfg_.hyper.backend);

  for (const auto& a : svd_) {
    ck.put(a.id() + "/P", a.factors().p);
    ck.put(a.id() + "/lambda", a.factors().lambda);
    ck.put(a.id() + "/Q", a.factors().q);
    ck.put_mask(a.id() + "/mask", a.mask());
  }
  for (std::size_t i = 0; i < lora_.size(); ++i) {
    ck.put(ids[i] + "/A", lora_[i].factors().a);
    ck.put(ids[i] + "/B", lora_[i].factors().b);
  }
  for (const HyperNet* h : {h_p_.get(), h_lambda_.get(), h_q_.get()}) {
    if (!h) continue;
    for (const auto& [name, t] : h->parameters()) {
      ck.put("hyper/" + std::string(role_name(h->role())) + "/" + name, t);
    }
  }
  return ck;
}

}  // namespace hyperadapt
