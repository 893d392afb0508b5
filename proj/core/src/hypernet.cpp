// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/hypernet.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/ops.hpp"

namespace hyperadapt {

std::string_view role_name(HyperRole role) {
  switch (role) {
    case HyperRole::P: return "P";
    case HyperRole::Lambda: return "lambda";
    case HyperRole::Q: return "Q";
  }
  return "?";
}

std::string_view backend_name(BackendKind kind) {
  switch (kind) {
    case BackendKind::Attention: return "attention";
    case BackendKind::Mlp: return "mlp";
    case BackendKind::Conv: return "conv";
  }
  return "?";
}

BackendKind parse_backend(std::string_view name) {
  if (name == "attention") return BackendKind::Attention;
  if (name == "mlp") return BackendKind::Mlp;
  if (name == "conv") return BackendKind::Conv;
  throw ConfigError("backend", "unknown backend '" + std::string(name) + "' (expected attention, mlp or conv)");
}

std::string_view activation_name(Activation act) {
  switch (act) {
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "gelu") return Activation::Gelu;
  if (name == "tanh") return Activation::Tanh;
  throw ConfigError("hyper.mlp_activation", "unknown activation '" + std::string(name) + "'");
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::Relu: return relu(x);
    case Activation::Gelu: return gelu(x);
    case Activation::Tanh: return tanh(x);
  }
  return x;
}

HyperConfig HyperConfig::fidelity() {
  HyperConfig cfg;
  cfg.hidden = 312;
  cfg.heads = 12;
  cfg.ffn = 1200;
  return cfg;
}

namespace {

Tensor normal(Shape shape, double stddev, std::mt19937_64& rng) { return Tensor::randn(std::move(shape), stddev, rng, true); }
Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

Tensor linear_rows(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return b.defined() ? add_row_vector(y, b) : y;
}

}  // namespace

Tensor multi_head_attention(const Tensor& tokens, const AttentionProjections& proj, std::size_t heads) {
  const std::size_t hidden = tokens.cols();
  if (heads == 0 || hidden % heads != 0) {
    throw DimensionError("attention: hidden width " + std::to_string(hidden) + " is not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dk = hidden / heads;
  const Tensor q = linear_rows(tokens, proj.wq, proj.bq);
  const Tensor k = linear_rows(tokens, proj.wk, proj.bk);
  const Tensor v = linear_rows(tokens, proj.wv, proj.bv);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * dk, hi = lo + dk;
    Tensor qh = heads == 1 ? q : slice_cols(q, lo, hi);
    Tensor kh = heads == 1 ? k : slice_cols(k, lo, hi);
    Tensor vh = heads == 1 ? v : slice_cols(v, lo, hi);
    Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dk), 1);
    outs.push_back(matmul(weights, vh));
  }
  return heads == 1 ? outs.front() : concat_cols(outs);
}

AttentionBackbone::AttentionBackbone(const HyperConfig& cfg, std::mt19937_64& rng)
    : heads_(cfg.heads), ln_eps_(cfg.ln_eps) {
  const std::size_t h = cfg.hidden;
  if (cfg.heads == 0 || h % cfg.heads != 0) {
    throw ConfigError("hyper.heads", "hidden width " + std::to_string(h) + " must be divisible by heads");
  }
  const double s = cfg.init_std;
  proj_.wq = normal({h, h}, s, rng);
  proj_.wk = normal({h, h}, s, rng);
  proj_.wv = normal({h, h}, s, rng);
  proj_.bq = zeros({h});
  proj_.bk = zeros({h});
  proj_.bv = zeros({h});
  wo_ = normal({h, h}, s, rng);
  bo_ = zeros({h});
  ln1_g_ = ones({h});
  ln1_b_ = zeros({h});
  w1_ = normal({h, cfg.ffn}, s, rng);
  b1_ = zeros({cfg.ffn});
  w2_ = normal({cfg.ffn, h}, s, rng);
  b2_ = zeros({h});
  ln2_g_ = ones({h});
  ln2_b_ = zeros({h});
}

Tensor AttentionBackbone::forward(const Tensor& hidden) const {
  Tensor attn = linear_rows(multi_head_attention(hidden, proj_, heads_), wo_, bo_);
  Tensor h1 = layer_norm_rows(add(hidden, attn), ln1_g_, ln1_b_, ln_eps_);
  Tensor ff = linear_rows(gelu(linear_rows(h1, w1_, b1_)), w2_, b2_);
  return layer_norm_rows(add(h1, ff), ln2_g_, ln2_b_, ln_eps_);
}

std::vector<NamedTensor> AttentionBackbone::parameters() const {
  return {{"attn.wq", proj_.wq}, {"attn.bq", proj_.bq}, {"attn.wk", proj_.wk}, {"attn.bk", proj_.bk},
          {"attn.wv", proj_.wv}, {"attn.bv", proj_.bv}, {"attn.wo", wo_},      {"attn.bo", bo_},
          {"ln1.gamma", ln1_g_}, {"ln1.beta", ln1_b_},  {"ffn.w1", w1_},       {"ffn.b1", b1_},
          {"ffn.w2", w2_},       {"ffn.b2", b2_},       {"ln2.gamma", ln2_g_}, {"ln2.beta", ln2_b_}};
}

MlpBackbone::MlpBackbone(const HyperConfig& cfg, std::mt19937_64& rng) : act_(cfg.mlp_activation) {
  std::vector<std::size_t> dims{cfg.hidden};
  dims.insert(dims.end(), cfg.mlp_widths.begin(), cfg.mlp_widths.end());
  dims.push_back(cfg.hidden);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    weights_.push_back(normal({dims[i], dims[i + 1]}, cfg.init_std, rng));
    biases_.push_back(zeros({dims[i + 1]}));
  }
}

Tensor MlpBackbone::forward(const Tensor& hidden) const {
  Tensor h = hidden;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = linear_rows(h, weights_[i], biases_[i]);
    if (i + 1 < weights_.size()) h = activate(h, act_);
  }
  return h;
}

std::vector<NamedTensor> MlpBackbone::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.emplace_back("mlp" + std::to_string(i) + ".w", weights_[i]);
    out.emplace_back("mlp" + std::to_string(i) + ".b", biases_[i]);
  }
  return out;
}

ConvBackbone::ConvBackbone(const HyperConfig& cfg, std::mt19937_64& rng) : kernels_(cfg.conv_kernels) {
  for (auto k : kernels_) {
    if (k == 0 || k % 2 == 0) throw ConfigError("hyper.conv_kernels", "kernel widths must be odd and positive");
    std::vector<Tensor> taps;
    for (std::size_t t = 0; t < k; ++t) taps.push_back(normal({cfg.hidden, cfg.hidden}, cfg.init_std, rng));
    taps_.push_back(std::move(taps));
    biases_.push_back(zeros({cfg.hidden}));
  }
}

Tensor ConvBackbone::forward(const Tensor& hidden) const {
  Tensor h = hidden;
  for (std::size_t layer = 0; layer < kernels_.size(); ++layer) {
    const long half = static_cast<long>(kernels_[layer] / 2);
    Tensor acc;
    for (std::size_t t = 0; t < kernels_[layer]; ++t) {
      // Tap t reads row i + (t - half), i.e. shifts rows by (half - t).
      const long offset = half - static_cast<long>(t);
      Tensor src = offset == 0 ? h : shift_rows(h, offset);
      Tensor term = matmul(src, taps_[layer][t]);
      acc = acc.defined() ? add(acc, term) : term;
    }
    h = add_row_vector(acc, biases_[layer]);
    if (layer + 1 < kernels_.size()) h = gelu(h);
  }
  return h;
}

std::vector<NamedTensor> ConvBackbone::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < taps_.size(); ++l) {
    for (std::size_t t = 0; t < taps_[l].size(); ++t) {
      out.emplace_back("conv" + std::to_string(l) + ".tap" + std::to_string(t), taps_[l][t]);
    }
    out.emplace_back("conv" + std::to_string(l) + ".b", biases_[l]);
  }
  return out;
}

std::unique_ptr<Backbone> make_backbone(const HyperConfig& cfg, std::mt19937_64& rng) {
  switch (cfg.backend) {
    case BackendKind::Attention: return std::make_unique<AttentionBackbone>(cfg, rng);
    case BackendKind::Mlp: return std::make_unique<MlpBackbone>(cfg, rng);
    case BackendKind::Conv: return std::make_unique<ConvBackbone>(cfg, rng);
  }
  throw ConfigError("backend", "unhandled backend");
}

std::size_t token_dim(HyperRole role, const Shape& shape) {
  switch (role) {
    case HyperRole::P:
      if (shape.size() == 2) return shape[1];
      break;
    case HyperRole::Q:
      if (shape.size() == 2) return shape[0];
      break;
    case HyperRole::Lambda:
      if (shape.size() == 1) return 1;
      break;
  }
  throw ConfigError("hyper." + std::string(role_name(role)),
                    "shape " + shape_str(shape) + " is not a valid " + std::string(role_name(role)) + " parameter");
}

Tensor sinusoidal_positions(std::size_t n, std::size_t width) {
  std::vector<double> table(n * width);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < width; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k - k % 2) / static_cast<double>(width));
      const double angle = static_cast<double>(i) * freq;
      table[i * width + k] = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({n, width}, std::move(table));
}

Tensor tokenize(HyperRole role, const Tensor& matrix) {
  token_dim(role, matrix.shape());
  switch (role) {
    case HyperRole::P: return matrix;
    case HyperRole::Q: return transpose(matrix);
    case HyperRole::Lambda: return reshape(matrix, {matrix.numel(), 1});
  }
  return matrix;
}

Tensor detokenize(HyperRole role, const Tensor& tokens) {
  if (tokens.ndim() != 2) throw DimensionError("detokenize: tokens must be a matrix");
  switch (role) {
    case HyperRole::P: return tokens;
    case HyperRole::Q: return transpose(tokens);
    case HyperRole::Lambda:
      if (tokens.cols() != 1) throw DimensionError("detokenize: lambda tokens must have width 1");
      return reshape(tokens, {tokens.rows()});
  }
  return tokens;
}

HyperNet::HyperNet(HyperRole role, HyperConfig cfg, std::uint64_t seed, bool zero_output)
    : role_(role), cfg_(std::move(cfg)), zero_output_(zero_output), rng_(seed) {
  backbone_ = make_backbone(cfg_, rng_);
}

void HyperNet::register_shape(std::size_t dim) {
  if (dim == 0) throw ConfigError("hyper.token_dim", "token width must be at least 1");
  if (has_shape(dim)) return;
  ShapeProjection proj;
  proj.w_in = normal({dim, cfg_.hidden}, cfg_.init_std, rng_);
  proj.b_in = zeros({cfg_.hidden});
  proj.w_out = zero_output_ ? zeros({cfg_.hidden, dim}) : normal({cfg_.hidden, dim}, cfg_.init_std, rng_);
  proj.b_out = zeros({dim});
  shapes_.emplace(dim, std::move(proj));
}

std::vector<std::size_t> HyperNet::registered_shapes() const {
  std::vector<std::size_t> out;
  for (const auto& [dim, proj] : shapes_) out.push_back(dim);
  return out;
}

Tensor HyperNet::generate(const Tensor& current) const {
  if (!current.is_leaf() || current.requires_grad()) {
    throw ContractError("generate() expects a detached parameter buffer");
  }
  const std::size_t dim = token_dim(role_, current.shape());
  auto it = shapes_.find(dim);
  if (it == shapes_.end()) {
    std::ostringstream os;
    os << "no projection registered for token width " << dim << "; registered widths: [";
    bool first = true;
    for (const auto& [d, p] : shapes_) {
      os << (first ? "" : ", ") << d;
      first = false;
    }
    os << ']';
    throw ConfigError("hyper." + std::string(role_name(role_)), os.str());
  }
  const auto& proj = it->second;
  const Tensor tokens = tokenize(role_, current);
  Tensor embedded = linear_rows(tokens, proj.w_in, proj.b_in);
  if (cfg_.position_encoding) embedded = add(embedded, sinusoidal_positions(embedded.rows(), cfg_.hidden));
  Tensor h = backbone_->forward(embedded);
  Tensor out = linear_rows(h, proj.w_out, proj.b_out);
  if (cfg_.residual) out = add(out, tokens);
  return detokenize(role_, out);
}

std::vector<NamedTensor> HyperNet::parameters() const {
  auto out = backbone_->parameters();
  for (const auto& [dim, p] : shapes_) {
    const std::string prefix = "proj" + std::to_string(dim) + "/";
    out.emplace_back(prefix + "w_in", p.w_in);
    out.emplace_back(prefix + "b_in", p.b_in);
    out.emplace_back(prefix + "w_out", p.w_out);
    out.emplace_back(prefix + "b_out", p.b_out);
  }
  return out;
}

std::size_t HyperNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

std::size_t HyperNet::backbone_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : backbone_->parameters()) n += t.numel();
  return n;
}

std::uint64_t HyperNet::backbone_checksum() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& [name, t] : backbone_->parameters()) {
    for (double v : t.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

}  // namespace hyperadapt
