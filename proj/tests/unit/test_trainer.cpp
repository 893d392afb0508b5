// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/ops.hpp"
#include "hyperadapt/trainer.hpp"
#include "oracles.hpp"

using namespace hyperadapt;

namespace {

TrainConfig tiny(const std::string& mode, long steps = 60) {
  nlohmann::json j = {{"mode", mode},
                      {"total_steps", steps},
                      {"warmup_steps", 5},
                      {"seed", 3},
                      {"task", {{"d1", 12}, {"d2", 10}, {"num_layers", 2}, {"dataset_size", 64}}},
                      {"hyper", {{"hidden", 16}, {"heads", 2}, {"ffn", 32}}},
                      {"prune", {{"delta_t", 10}}}};
  return config_from_json(j);
}

const char* kModes[] = {"lora", "hyper_lora", "adalora", "hyper_adalora"};

using Mat = Eigen::MatrixXd;

Mat to_eigen(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

}  // namespace

TEST_CASE("lr schedule") {
  CHECK(lr_at(0, 1e-3, 100, 1000) == 0.0);
  CHECK(lr_at(50, 1e-3, 100, 1000) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_at(100, 1e-3, 100, 1000) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(std::abs(lr_at(1000, 1e-3, 100, 1000)) < 1e-18);
  CHECK(lr_at(550, 1e-3, 100, 1000) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(0, 1e-3, 100, 100), ConfigError);
  CHECK_THROWS_AS(lr_at(1001, 1e-3, 100, 1000), ContractError);

  for (long w : {1L, 7L, 50L}) {
    for (long s = 1; s < w; ++s) CHECK(lr_at(s + 1, 0.1, w, 200) > lr_at(s, 0.1, w, 200));
    for (long s = w; s < 200; ++s) CHECK(lr_at(s + 1, 0.1, w, 200) <= lr_at(s, 0.1, w, 200));
  }
}

TEST_CASE("composite_loss") {
  const Tensor task = Tensor::scalar(1.0);
  const SvdFactors bad{scale(Tensor::eye(2), 2.0), Tensor::zeros({2}), Tensor::eye(2)};
  const SvdFactors good{Tensor::from({3, 2}, {1, 0, 0, 1, 0, 0}), Tensor::zeros({2}), Tensor::eye(2)};
  CHECK(composite_loss(task, {bad}, 0.1).item() == doctest::Approx(2.8).epsilon(1e-15));
  CHECK(composite_loss(task, {bad}, 0.0).item() == 1.0);
  CHECK(composite_loss(task, {good, good}, 0.1).item() == 1.0);
  CHECK(composite_loss(task, {}, 0.1).item() == 1.0);
  CHECK_THROWS_AS(composite_loss(task, {bad}, -0.1), ContractError);

  Tensor p = Tensor::from({2, 2}, {2, 0, 0, 2}, true);
  backward(composite_loss(Tensor::scalar(0.0, true), {{p, Tensor::zeros({2}), Tensor::eye(2)}}, 0.1));
  // d/dP ||P^T P - I||^2 = 4 P (P^T P - I) = 4 * 2 * 3 on the diagonal.
  CHECK(p.grad()[0] == doctest::Approx(0.1 * 24.0));
  CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("initialization") {
  std::mt19937_64 rng(12);
  const SvdAdapter ad = SvdAdapter::init("a", 5000, 4, 2, 0.02, rng);
  double mean = 0.0;
  for (double v : ad.factors().p.values()) mean += v;
  mean /= 1e4;
  CHECK(std::abs(mean) < 3.0 * 0.02 / std::sqrt(1e4));
  for (double v : ad.factors().lambda.values()) CHECK(v == 0.0);

  for (const char* mode : kModes) {
    Trainer t(tiny(mode));
    for (const auto& a : t.svd_adapters())
      for (double v : a.factors().lambda.values()) CHECK(v == 0.0);
    for (const auto& a : t.lora_adapters())
      for (double v : a.factors().b.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("step zero reproduces the frozen model in every mode") {
  for (const char* mode : kModes) {
    for (const char* backend : {"attention", "mlp", "conv"}) {
      TrainConfig cfg = tiny(mode);
      cfg.hyper.backend = parse_backend(backend);
      Trainer t(cfg);
      const Batch b = t.next_batch();
      const auto cur = t.current_outputs(b), frozen = t.frozen_outputs(b);
      for (std::size_t l = 0; l < cur.size(); ++l) CHECK(oracle::bitwise_equal(cur[l].values(), frozen[l].values()));
      if (!is_hyper(cfg.mode)) break;
    }
  }
}

TEST_CASE("training is deterministic and keeps the loss identity") {
  for (const char* mode : kModes) {
    INFO(mode);
    Trainer a(tiny(mode, 40)), b(tiny(mode, 40));
    const auto ma = a.run(), mb = b.run();
    REQUIRE(ma.size() == 40);
    for (std::size_t i = 0; i < ma.size(); ++i) {
      CHECK(ma[i].task_loss == mb[i].task_loss);
      CHECK(ma[i].total_loss == mb[i].total_loss);
      CHECK(ma[i].effective_rank_total == mb[i].effective_rank_total);
      CHECK(std::abs(ma[i].total_loss - (ma[i].task_loss + 0.1 * ma[i].orth_penalty_value)) <= 1e-12);
    }
  }
}

TEST_CASE("the frozen base never changes") {
  for (const char* mode : kModes) {
    Trainer t(tiny(mode, 30));
    std::vector<std::uint64_t> before;
    for (const auto& l : t.task().base_layers()) before.push_back(l.checksum());
    t.run();
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(t.task().base_layers()[i].checksum() == before[i]);
  }
}

TEST_CASE("gradient routing") {
  for (const char* mode : {"hyper_lora", "hyper_adalora"}) {
    Trainer t(tiny(mode, 20));
    for (long s = 0; s < 3; ++s) {
      t.train_step(t.next_batch(), s);
      for (const auto& buf : t.adapter_buffers()) {
        CHECK_FALSE(buf.requires_grad());
        CHECK_FALSE(buf.has_grad());
      }
      bool any = false;
      for (const auto& p : t.trainable_parameters()) any = any || p.has_grad();
      CHECK(any);
    }
  }
  for (const char* mode : {"lora", "adalora"}) {
    Trainer t(tiny(mode, 20));
    CHECK(t.hypernet(HyperRole::P) == nullptr);
    CHECK(t.hypernet(HyperRole::Lambda) == nullptr);
    CHECK(t.trainable_parameters().size() == t.adapter_buffers().size());
  }
}

TEST_CASE("hyper mode commits the generated factors") {
  Trainer t(tiny("hyper_adalora", 20));
  t.train_step(t.next_batch(), 0);
  const auto& gen = t.last_factors();
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const auto& f = t.svd_adapters()[i].factors();
    CHECK(oracle::bitwise_equal(f.p.values(), gen[i].p.values()));
    CHECK(oracle::bitwise_equal(f.q.values(), gen[i].q.values()));
  }
}

TEST_CASE("pruning lowers the rank one slot per event") {
  for (const char* mode : {"adalora", "hyper_adalora"}) {
    TrainConfig cfg = tiny(mode, 60);
    cfg.prune.target_rank = 0;
    Trainer t(cfg);
    const auto m = t.run();
    const auto& events = t.prune_events();
    CHECK(events.size() == 4);  // steps 15, 25, 35, 45 with start 5 and end 48
    const std::size_t r_total = 2 * cfg.rank;
    for (std::size_t e = 0; e < events.size(); ++e) CHECK(events[e].remaining_rank == r_total - (e + 1));
    for (std::size_t i = 1; i < m.size(); ++i) CHECK(m[i].effective_rank_total <= m[i - 1].effective_rank_total);
  }
}

TEST_CASE("adalora without pruning or penalty matches a hand-written SVD-LoRA loop") {
  TrainConfig cfg = tiny("adalora", 40);
  cfg.prune.enabled = false;
  cfg.gamma = 0.0;
  cfg.grad_clip = 0.0;
  Trainer t(cfg);

  const std::size_t layers = t.svd_adapters().size();
  std::vector<Mat> P, Q;
  std::vector<Eigen::VectorXd> L;
  for (const auto& a : t.svd_adapters()) {
    P.push_back(to_eigen(a.factors().p));
    Q.push_back(to_eigen(a.factors().q));
    L.push_back(to_eigen(reshape(a.factors().lambda, {a.rank(), 1})).col(0));
  }
  struct Moments {
    Mat mp, vp, mq, vq;
    Eigen::VectorXd ml, vl;
  };
  std::vector<Moments> mom;
  for (std::size_t l = 0; l < layers; ++l)
    mom.push_back({Mat::Zero(P[l].rows(), P[l].cols()), Mat::Zero(P[l].rows(), P[l].cols()),
                   Mat::Zero(Q[l].rows(), Q[l].cols()), Mat::Zero(Q[l].rows(), Q[l].cols()),
                   Eigen::VectorXd::Zero(L[l].size()), Eigen::VectorXd::Zero(L[l].size())});

  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto adam = [&](auto& w, auto& m, auto& v, const auto& g, double lr, int step) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseProduct(g);
    const double c1 = 1 - std::pow(b1, step), c2 = 1 - std::pow(b2, step);
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };

  for (long step = 0; step < cfg.total_steps; ++step) {
    const Batch batch = t.next_batch();
    const auto frozen = t.frozen_outputs(batch);
    const Mat X = to_eigen(batch.x);
    const double n = static_cast<double>(X.cols());
    double loss = 0.0;
    std::vector<Mat> gP(layers), gQ(layers);
    std::vector<Eigen::VectorXd> gL(layers);
    for (std::size_t l = 0; l < layers; ++l) {
      const Mat Y = to_eigen(frozen[l]) + P[l] * L[l].asDiagonal() * Q[l] * X;
      const Mat R = Y - to_eigen(batch.targets[l]);
      // Squared error summed over outputs, averaged over samples and layers.
      loss += R.squaredNorm() / n / static_cast<double>(layers);
      const Mat G = (2.0 / (n * static_cast<double>(layers))) * R * X.transpose();
      gP[l] = G * Q[l].transpose() * L[l].asDiagonal();
      gQ[l] = L[l].asDiagonal() * P[l].transpose() * G;
      gL[l] = (P[l].transpose() * G * Q[l].transpose()).diagonal();
    }
    const double lr = cfg.lr_max * (step < cfg.warmup_steps
                                        ? static_cast<double>(step) / cfg.warmup_steps
                                        : 0.5 * (1 + std::cos(std::numbers::pi * (step - cfg.warmup_steps) /
                                                              static_cast<double>(cfg.total_steps - cfg.warmup_steps))));
    const StepMetrics m = t.train_step(batch, step);
    CHECK(std::abs(m.task_loss - loss) <= 1e-10 * std::max(1.0, loss));
    for (std::size_t l = 0; l < layers; ++l) {
      adam(P[l], mom[l].mp, mom[l].vp, gP[l], lr, static_cast<int>(step + 1));
      adam(L[l], mom[l].ml, mom[l].vl, gL[l], lr, static_cast<int>(step + 1));
      adam(Q[l], mom[l].mq, mom[l].vq, gQ[l], lr, static_cast<int>(step + 1));
    }
  }
  for (std::size_t l = 0; l < layers; ++l)
    CHECK((to_eigen(t.svd_adapters()[l].factors().p) - P[l]).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("non-finite loss aborts with a dump of recent metrics") {
  TrainConfig cfg = tiny("adalora", 50);
  cfg.lr_max = 1e300;
  cfg.grad_clip = 0.0;
  Trainer t(cfg);
  try {
    t.run();
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(std::string(e.what()).find("last metrics") != std::string::npos);
  }
}

TEST_CASE("checkpoint carries adapters and hypernetworks") {
  Trainer t(tiny("hyper_adalora", 10));
  t.run();
  const KvCheckpoint ck = t.checkpoint();
  const auto ids = t.task().adapter_ids();
  for (const auto& id : ids) {
    CHECK(ck.contains(id + "/P"));
    CHECK(ck.contains(id + "/lambda"));
    CHECK(ck.contains(id + "/Q"));
    CHECK(ck.contains(id + "/mask"));
  }
  std::size_t hyper_keys = 0;
  for (const auto& [key, e] : ck.entries()) hyper_keys += key.rfind("hyper/", 0) == 0;
  std::size_t phi = 0;
  for (auto role : {HyperRole::P, HyperRole::Lambda, HyperRole::Q}) phi += t.hypernet(role)->parameters().size();
  CHECK(hyper_keys == phi);
  CHECK(oracle::bitwise_equal(ck.tensor(ids[0] + "/P").values(), t.svd_adapters()[0].factors().p.values()));
}

TEST_CASE("classification task trains") {
  nlohmann::json j = {{"mode", "adalora"},
                      {"total_steps", 30},
                      {"task", {{"variant", "seq_classification"}, {"d1", 16}, {"d2", 16}, {"dataset_size", 64}}}};
  Trainer t(config_from_json(j));
  const auto m = t.run();
  CHECK(m.size() == 30);
  for (const auto& row : m) CHECK(std::isfinite(row.task_loss));
  CHECK(t.svd_adapters().size() == 2);
}
