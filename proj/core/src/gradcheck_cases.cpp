// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "hyperadapt/adapters.hpp"
#include "hyperadapt/harness.hpp"
#include "hyperadapt/hypernet.hpp"
#include "hyperadapt/ops.hpp"

namespace hyperadapt {

namespace {

using Rng = std::mt19937_64;
using UnaryFn = std::function<Tensor(const Tensor&)>;

Rng seeded(unsigned seed, std::uint64_t salt) { return Rng(0x5eedULL * (seed + 1) + salt); }

Tensor leaf(Shape s, Rng& rng, double std = 1.0) { return Tensor::randn(std::move(s), std, rng, true); }

Tensor weighted(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

// Keeps inputs away from kinks so central differences stay valid.
void push_off_zero(Tensor& t, double margin) {
  for (double& v : t.mutable_values()) v = (v < 0 ? -1.0 : 1.0) * (margin + std::abs(v));
}

GradCheckCase unary_case(std::string name, UnaryFn f, Shape shape, double margin = 0.0) {
  return {std::move(name), [f, shape, margin](unsigned seed) {
            Rng rng = seeded(seed, 1);
            Tensor x = leaf(shape, rng);
            if (margin > 0.0) push_off_zero(x, margin);
            const Tensor w = Tensor::randn(f(x.detach()).shape(), 1.0, rng);
            return gradcheck([&] { return weighted(f(x), w); }, {x});
          }};
}

using BinaryFn = std::function<Tensor(const Tensor&, const Tensor&)>;

GradCheckCase binary_case(std::string name, BinaryFn f, Shape sa, Shape sb) {
  return {std::move(name), [f, sa, sb](unsigned seed) {
            Rng rng = seeded(seed, 2);
            Tensor a = leaf(sa, rng);
            Tensor b = leaf(sb, rng);
            const Tensor w = Tensor::randn(f(a.detach(), b.detach()).shape(), 1.0, rng);
            return gradcheck([&] { return weighted(f(a, b), w); }, {a, b});
          }};
}

void randomize(const std::vector<NamedTensor>& params, double std, Rng& rng) {
  std::normal_distribution<double> nd(0.0, std);
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    for (double& v : handle.mutable_values()) v = nd(rng);
  }
}

HyperConfig toy_hyper(BackendKind kind) {
  HyperConfig cfg;
  cfg.backend = kind;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.mlp_widths = {12};
  cfg.conv_kernels = {3};
  return cfg;
}

GradCheckCase backbone_case(BackendKind kind) {
  return {"backbone_" + std::string(backend_name(kind)), [kind](unsigned seed) {
            Rng rng = seeded(seed, 3);
            const HyperConfig cfg = toy_hyper(kind);
            auto bb = make_backbone(cfg, rng);
            randomize(bb->parameters(), 0.3, rng);
            Tensor h = leaf({5, cfg.hidden}, rng);
            const Tensor w = Tensor::randn({5, cfg.hidden}, 1.0, rng);
            std::vector<Tensor> inputs{h};
            for (const auto& [name, t] : bb->parameters()) inputs.push_back(t);
            return gradcheck([&] { return weighted(bb->forward(h), w); }, inputs);
          }};
}

struct Toy {
  FrozenLinear base;
  Tensor x, y;
  std::vector<bool> mask;
};

Toy make_toy(Rng& rng) {
  Toy t{FrozenLinear(Tensor::randn({4, 3}, 0.5, rng), Tensor::randn({4}, 0.5, rng)), Tensor::randn({3, 5}, 1.0, rng),
        Tensor::randn({4, 5}, 1.0, rng), {true, true, false}};
  return t;
}

GradCheckCase direct_pipeline_case() {
  return {"pipeline_direct_adalora", [](unsigned seed) {
            Rng rng = seeded(seed, 4);
            const Toy toy = make_toy(rng);
            Tensor p = leaf({4, 3}, rng), lam = leaf({3}, rng), q = leaf({3, 3}, rng);
            return gradcheck(
                [&] {
                  const Tensor out = svd_forward(toy.base, SvdFactors{p, lam, q}, toy.mask, toy.x);
                  return add(mse(out, toy.y), scale(orth_penalty(p, q), 0.1));
                },
                {p, lam, q});
          }};
}

GradCheckCase direct_lora_pipeline_case() {
  return {"pipeline_direct_lora", [](unsigned seed) {
            Rng rng = seeded(seed, 5);
            const Toy toy = make_toy(rng);
            Tensor a = leaf({2, 3}, rng), b = leaf({4, 2}, rng);
            return gradcheck([&] { return mse(lora_forward(toy.base, LoraFactors{a, b}, toy.x), toy.y); }, {a, b});
          }};
}

GradCheckCase hyper_pipeline_case(BackendKind kind) {
  return {"pipeline_hyper_adalora_" + std::string(backend_name(kind)), [kind](unsigned seed) {
            Rng rng = seeded(seed, 6);
            const Toy toy = make_toy(rng);
            const HyperConfig cfg = toy_hyper(kind);
            HyperNet hp(HyperRole::P, cfg, rng(), false), hl(HyperRole::Lambda, cfg, rng(), false),
                hq(HyperRole::Q, cfg, rng(), false);
            hp.register_shape(3);
            hl.register_shape(1);
            hq.register_shape(3);
            std::vector<Tensor> phi;
            for (HyperNet* h : {&hp, &hl, &hq}) {
              randomize(h->parameters(), 0.3, rng);
              for (const auto& [name, t] : h->parameters()) phi.push_back(t);
            }
            const Tensor p = Tensor::randn({4, 3}, 0.5, rng), lam = Tensor::randn({3}, 0.5, rng),
                         q = Tensor::randn({3, 3}, 0.5, rng);
            return gradcheck(
                [&] {
                  const SvdFactors f{hp.generate(p), hl.generate(lam), hq.generate(q)};
                  const Tensor out = svd_forward(toy.base, f, toy.mask, toy.x);
                  return add(mse(out, toy.y), scale(orth_penalty(f.p, f.q), 0.1));
                },
                phi);
          }};
}

GradCheckCase hyper_lora_pipeline_case() {
  return {"pipeline_hyper_lora_attention", [](unsigned seed) {
            Rng rng = seeded(seed, 7);
            const Toy toy = make_toy(rng);
            const HyperConfig cfg = toy_hyper(BackendKind::Attention);
            HyperNet hp(HyperRole::P, cfg, rng(), false), hq(HyperRole::Q, cfg, rng(), false);
            hp.register_shape(2);
            hq.register_shape(2);
            std::vector<Tensor> phi;
            for (HyperNet* h : {&hp, &hq}) {
              randomize(h->parameters(), 0.3, rng);
              for (const auto& [name, t] : h->parameters()) phi.push_back(t);
            }
            const Tensor b = Tensor::randn({4, 2}, 0.5, rng), a = Tensor::randn({2, 3}, 0.5, rng);
            return gradcheck(
                [&] {
                  const LoraFactors f{hq.generate(a), hp.generate(b)};
                  return mse(lora_forward(toy.base, f, toy.x), toy.y);
                },
                phi);
          }};
}

}  // namespace

std::vector<GradCheckCase> standard_gradcheck_cases() {
  std::vector<GradCheckCase> c;
  const Shape m{3, 4};
  c.push_back(binary_case("matmul", [](auto& a, auto& b) { return matmul(a, b); }, {3, 4}, {4, 2}));
  c.push_back(unary_case("transpose", [](auto& x) { return transpose(x); }, m));
  c.push_back(binary_case("add", [](auto& a, auto& b) { return add(a, b); }, m, m));
  c.push_back(binary_case("add_scalar_broadcast", [](auto& a, auto& b) { return add(a, b); }, m, {1}));
  c.push_back(binary_case("sub", [](auto& a, auto& b) { return sub(a, b); }, m, m));
  c.push_back(binary_case("mul", [](auto& a, auto& b) { return mul(a, b); }, m, m));
  c.push_back(binary_case("mul_scalar_broadcast", [](auto& a, auto& b) { return mul(b, a); }, m, {1}));
  c.push_back(unary_case("scale", [](auto& x) { return scale(x, -1.7); }, m));
  c.push_back(unary_case("add_scalar", [](auto& x) { return add_scalar(x, 0.3); }, m));
  c.push_back(unary_case("relu", [](auto& x) { return relu(x); }, m, 0.05));
  c.push_back(unary_case("exp", [](auto& x) { return exp(x); }, m));
  c.push_back(unary_case("tanh", [](auto& x) { return tanh(x); }, m));
  c.push_back(unary_case("gelu", [](auto& x) { return gelu(x); }, m));
  c.push_back(unary_case("softmax_axis0", [](auto& x) { return softmax(x, 0); }, m));
  c.push_back(unary_case("softmax_axis1", [](auto& x) { return softmax(x, 1); }, m));
  c.push_back(unary_case("sum", [](auto& x) { return sum(x); }, m));
  c.push_back(unary_case("mean", [](auto& x) { return mean(x); }, m));
  c.push_back(unary_case("frobenius_sq", [](auto& x) { return frobenius_sq(x); }, m));
  c.push_back(binary_case("mse", [](auto& a, auto& b) { return mse(a, b); }, m, m));
  c.push_back(unary_case("cross_entropy", [](auto& x) { return cross_entropy(x, {0, 3, 1}); }, m));
  c.push_back(unary_case("reshape", [](auto& x) { return reshape(x, {2, 6}); }, m));
  c.push_back(unary_case("slice_cols", [](auto& x) { return slice_cols(x, 1, 3); }, m));
  c.push_back(binary_case("concat_cols", [](auto& a, auto& b) { return concat_cols({a, b}); }, m, {3, 2}));
  c.push_back(binary_case("add_row_vector", [](auto& a, auto& b) { return add_row_vector(a, b); }, m, {4}));
  c.push_back(binary_case("add_col_vector", [](auto& a, auto& b) { return add_col_vector(a, b); }, m, {3}));
  c.push_back(binary_case("scale_cols", [](auto& a, auto& b) { return scale_cols(a, b); }, m, {4}));
  c.push_back(unary_case("mask_select", [](auto& x) { return mask_select(x, {true, false, true}); }, {3}));
  c.push_back(unary_case("shift_rows_up", [](auto& x) { return shift_rows(x, 1); }, m));
  c.push_back(unary_case("shift_rows_down", [](auto& x) { return shift_rows(x, -2); }, m));
  c.push_back({"layer_norm_rows", [](unsigned seed) {
                 Rng rng = seeded(seed, 8);
                 Tensor x = leaf({3, 4}, rng), g = leaf({4}, rng), b = leaf({4}, rng);
                 const Tensor w = Tensor::randn({3, 4}, 1.0, rng);
                 return gradcheck([&] { return weighted(layer_norm_rows(x, g, b, 1e-5), w); }, {x, g, b});
               }});
  c.push_back({"multi_head_attention", [](unsigned seed) {
                 Rng rng = seeded(seed, 9);
                 Tensor tok = leaf({4, 6}, rng);
                 AttentionProjections p{leaf({6, 6}, rng, 0.5), leaf({6, 6}, rng, 0.5), leaf({6, 6}, rng, 0.5),
                                        leaf({6}, rng), leaf({6}, rng), leaf({6}, rng)};
                 const Tensor w = Tensor::randn({4, 6}, 1.0, rng);
                 return gradcheck([&] { return weighted(multi_head_attention(tok, p, 2), w); },
                                  {tok, p.wq, p.wk, p.wv, p.bq, p.bk, p.bv});
               }});
  c.push_back({"orth_penalty", [](unsigned seed) {
                 Rng rng = seeded(seed, 10);
                 Tensor p = leaf({5, 3}, rng), q = leaf({3, 4}, rng);
                 return gradcheck([&] { return orth_penalty(p, q); }, {p, q});
               }});
  for (auto kind : {BackendKind::Attention, BackendKind::Mlp, BackendKind::Conv}) c.push_back(backbone_case(kind));
  c.push_back(direct_lora_pipeline_case());
  c.push_back(direct_pipeline_case());
  c.push_back(hyper_lora_pipeline_case());
  for (auto kind : {BackendKind::Attention, BackendKind::Mlp, BackendKind::Conv})
    c.push_back(hyper_pipeline_case(kind));
  return c;
}

}  // namespace hyperadapt
