// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

/// Which SVD factor a hypernetwork regenerates.
enum class HyperRole { P, Lambda, Q };

std::string_view role_name(HyperRole role);

enum class BackendKind { Attention, Mlp, Conv };

std::string_view backend_name(BackendKind kind);
BackendKind parse_backend(std::string_view name);

enum class Activation { Relu, Gelu, Tanh };

std::string_view activation_name(Activation act);
Activation parse_activation(std::string_view name);
Tensor activate(const Tensor& x, Activation act);

struct HyperConfig {
  BackendKind backend = BackendKind::Attention;
  /// Width of the shared core. For conv this is also the channel count.
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ffn = 256;
  std::vector<std::size_t> mlp_widths{128};
  Activation mlp_activation = Activation::Gelu;
  std::vector<std::size_t> conv_kernels{3, 3};
  double init_std = 0.02;
  double ln_eps = 1e-5;
  /// Adds the input tokens back onto the projected output, so the network
  /// predicts an update to the stored matrix rather than its full value.
  bool residual = false;
  /// Adds fixed sinusoidal encodings of the token index after the input
  /// projection. Without them every row is treated identically and the
  /// generated matrices collapse towards rank one.
  bool position_encoding = true;
  /// Multiplier on the scheduled learning rate for the hypernetwork weights.
  double lr_scale = 0.3;

  /// Single encoder layer at hidden 312 with 12 heads and a 1200-wide
  /// feed-forward block.
  static HyperConfig fidelity();
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Shared per-role core that maps [tokens x hidden] to [tokens x hidden].
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual Tensor forward(const Tensor& hidden) const = 0;
  virtual std::vector<NamedTensor> parameters() const = 0;
  virtual BackendKind kind() const = 0;
};

std::unique_ptr<Backbone> make_backbone(const HyperConfig& cfg, std::mt19937_64& rng);

struct AttentionProjections {
  Tensor wq, wk, wv;  // [hidden x hidden]
  Tensor bq, bk, bv;  // [hidden], may be undefined
};

/// Multi-head scaled dot-product self-attention over token rows. Each head h
/// produces out_i = sum_j softmax_j(q_i . k_j / sqrt(d_k)) v_j with
/// d_k = hidden / heads; head outputs are concatenated (no output mixing).
Tensor multi_head_attention(const Tensor& tokens, const AttentionProjections& proj, std::size_t heads);

/// Post-LN transformer encoder layer: attention + output mix, residual,
/// LayerNorm, GELU feed-forward, residual, LayerNorm. No positional encoding.
class AttentionBackbone : public Backbone {
 public:
  AttentionBackbone(const HyperConfig& cfg, std::mt19937_64& rng);
  Tensor forward(const Tensor& hidden) const override;
  std::vector<NamedTensor> parameters() const override;
  BackendKind kind() const override { return BackendKind::Attention; }

  AttentionProjections& projections() { return proj_; }

 private:
  std::size_t heads_;
  double ln_eps_;
  AttentionProjections proj_;
  Tensor wo_, bo_, ln1_g_, ln1_b_, w1_, b1_, w2_, b2_, ln2_g_, ln2_b_;
};

/// Per-token MLP: hidden -> widths... -> hidden with activations between.
class MlpBackbone : public Backbone {
 public:
  MlpBackbone(const HyperConfig& cfg, std::mt19937_64& rng);
  Tensor forward(const Tensor& hidden) const override;
  std::vector<NamedTensor> parameters() const override;
  BackendKind kind() const override { return BackendKind::Mlp; }

 private:
  Activation act_;
  std::vector<Tensor> weights_, biases_;
};

/// Stack of same-padded 1-D convolutions over the token axis, hidden channels
/// in and out, GELU between layers.
class ConvBackbone : public Backbone {
 public:
  ConvBackbone(const HyperConfig& cfg, std::mt19937_64& rng);
  Tensor forward(const Tensor& hidden) const override;
  std::vector<NamedTensor> parameters() const override;
  BackendKind kind() const override { return BackendKind::Conv; }

 private:
  std::vector<std::size_t> kernels_;
  // taps_[layer][k] is the [hidden x hidden] weight applied to offset k.
  std::vector<std::vector<Tensor>> taps_;
  std::vector<Tensor> biases_;
};

/// Token view of a parameter matrix:
///   P [d1 x r]  -> d1 tokens of dim r (rows)
///   Q [r x d2]  -> d2 tokens of dim r (columns)
///   lambda [r]  -> r tokens of dim 1
/// Differentiable; row/column order is preserved.
Tensor tokenize(HyperRole role, const Tensor& matrix);
/// [n x width] table with sin/cos pairs at geometrically spaced frequencies.
Tensor sinusoidal_positions(std::size_t n, std::size_t width);
Tensor detokenize(HyperRole role, const Tensor& tokens);
std::size_t token_dim(HyperRole role, const Shape& shape);

/// One shared parameter generator per role. Φ is the backbone plus one
/// input/output projection pair per registered token width.
class HyperNet {
 public:
  HyperNet(HyperRole role, HyperConfig cfg, std::uint64_t seed, bool zero_output);

  HyperRole role() const { return role_; }
  const HyperConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return *backbone_; }
  Backbone& backbone() { return *backbone_; }

  /// Creates input/output projections for `dim`-wide tokens. Idempotent.
  void register_shape(std::size_t dim);
  bool has_shape(std::size_t dim) const { return shapes_.count(dim) != 0; }
  std::vector<std::size_t> registered_shapes() const;

  /// Regenerates a same-shape parameter from `current`, which must be plain
  /// data (a leaf without requires_grad). The result is differentiable with
  /// respect to Φ only.
  Tensor generate(const Tensor& current) const;

  /// Φ: backbone parameters followed by the per-shape projections, named
  /// "<param>" for the core and "proj<dim>/<param>" for projections.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
  std::size_t backbone_parameter_count() const;
  std::uint64_t backbone_checksum() const;

 private:
  struct ShapeProjection {
    Tensor w_in, b_in, w_out, b_out;
  };

  HyperRole role_;
  HyperConfig cfg_;
  bool zero_output_;
  std::mt19937_64 rng_;
  std::unique_ptr<Backbone> backbone_;
  std::map<std::size_t, ShapeProjection> shapes_;
};

}  // namespace hyperadapt
