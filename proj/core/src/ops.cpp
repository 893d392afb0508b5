// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(std::span<const double> v, std::size_t r, std::size_t c) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MutMap as_mat(std::span<double> v, std::size_t r, std::size_t c) {
  return MutMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

enum class Bcast { Same, LeftScalar, RightScalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (b.numel() == 1) return Bcast::RightScalar;
  if (a.numel() == 1) return Bcast::LeftScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

template <typename Fwd>
std::vector<double> binary_values(const Tensor& a, const Tensor& b, Bcast kind, Fwd f) {
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t n = kind == Bcast::LeftScalar ? bv.size() : av.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = kind == Bcast::LeftScalar ? av[0] : av[i];
    const double y = kind == Bcast::RightScalar ? bv[0] : bv[i];
    out[i] = f(x, y);
  }
  return out;
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, Bcast kind) {
  return kind == Bcast::LeftScalar ? b.shape() : a.shape();
}

// Adds g into dst, reducing to a single element when dst is the scalar side.
void accumulate(std::span<double> dst, std::span<const double> g) {
  if (dst.empty()) return;
  if (dst.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  } else {
    double s = 0.0;
    for (double x : g) s += x;
    dst[0] += s;
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd f, Deriv dfdx) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor saved_x = x;
  std::vector<double> saved_out = out;
  return make_op(x.shape(), std::move(out), name, {x},
                 [saved_x, saved_out = std::move(saved_out), dfdx](std::span<const double> g,
                                                                  std::span<const std::span<double>> pg) {
                   auto gx = pg[0];
                   if (gx.empty()) return;
                   const auto xv = saved_x.values();
                   for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], saved_out[i]);
                 });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  as_mat(std::span<double>(out), m, n).noalias() = as_mat(a.values(), m, k) * as_mat(b.values(), k, n);
  return make_op({m, n}, std::move(out), "matmul", {a, b},
                 [a, b, m, k, n](std::span<const double> g, std::span<const std::span<double>> pg) {
                   const auto gm = as_mat(g, m, n);
                   if (!pg[0].empty()) as_mat(pg[0], m, k).noalias() += gm * as_mat(b.values(), k, n).transpose();
                   if (!pg[1].empty()) as_mat(pg[1], k, n).noalias() += as_mat(a.values(), m, k).transpose() * gm;
                 });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  as_mat(std::span<double>(out), n, m) = as_mat(a.values(), m, n).transpose();
  return make_op({n, m}, std::move(out), "transpose", {a},
                 [m, n](std::span<const double> g, std::span<const std::span<double>> pg) {
                   if (!pg[0].empty()) as_mat(pg[0], m, n) += as_mat(g, n, m).transpose();
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind(a, b, "add");
  return make_op(broadcast_shape(a, b, kind), binary_values(a, b, kind, std::plus<>()), "add", {a, b},
                 [](std::span<const double> g, std::span<const std::span<double>> pg) {
                   accumulate(pg[0], g);
                   accumulate(pg[1], g);
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind(a, b, "sub");
  return make_op(broadcast_shape(a, b, kind), binary_values(a, b, kind, std::minus<>()), "sub", {a, b},
                 [](std::span<const double> g, std::span<const std::span<double>> pg) {
                   accumulate(pg[0], g);
                   if (pg[1].empty()) return;
                   std::vector<double> neg(g.begin(), g.end());
                   for (auto& x : neg) x = -x;
                   accumulate(pg[1], neg);
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind(a, b, "mul");
  return make_op(broadcast_shape(a, b, kind), binary_values(a, b, kind, std::multiplies<>()), "mul", {a, b},
                 [a, b, kind](std::span<const double> g, std::span<const std::span<double>> pg) {
                   const auto av = a.values();
                   const auto bv = b.values();
                   std::vector<double> tmp(g.size());
                   if (!pg[0].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * (kind == Bcast::RightScalar ? bv[0] : bv[i]);
                     accumulate(pg[0], tmp);
                   }
                   if (!pg[1].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * (kind == Bcast::LeftScalar ? av[0] : av[i]);
                     accumulate(pg[1], tmp);
                   }
                 });
}

Tensor scale(const Tensor& a, double factor) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return make_op(a.shape(), std::move(out), "scale", {a},
                 [factor](std::span<const double> g, std::span<const std::span<double>> pg) {
                   if (pg[0].empty()) return;
                   for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * factor;
                 });
}

Tensor add_scalar(const Tensor& a, double value) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + value;
  return make_op(a.shape(), std::move(out), "add_scalar", {a},
                 [](std::span<const double> g, std::span<const std::span<double>> pg) { accumulate(pg[0], g); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  const auto xv = x.values();
  for (double v : xv) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  std::vector<double> y = out;
  return make_op(shape, std::move(out), "softmax", {x},
                 [y = std::move(y), outer, inner, n](std::span<const double> g, std::span<const std::span<double>> pg) {
                   if (pg[0].empty()) return;
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t in = 0; in < inner; ++in) {
                       const std::size_t base = o * n * inner + in;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
                       for (std::size_t j = 0; j < n; ++j) {
                         const std::size_t idx = base + j * inner;
                         pg[0][idx] += y[idx] * (g[idx] - dot);
                       }
                     }
                   }
                 });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op({1}, {s}, "sum", {x}, [](std::span<const double> g, std::span<const std::span<double>> pg) {
    for (auto& d : pg[0]) d += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor frobenius_sq(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  return make_op({1}, {s}, "frobenius_sq", {x}, [x](std::span<const double> g, std::span<const std::span<double>> pg) {
    if (pg[0].empty()) return;
    const auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) pg[0][i] += 2.0 * xv[i] * g[0];
  });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse: shapes differ " + shape_str(prediction.shape()) + " vs " + shape_str(target.shape()));
  }
  return scale(frobenius_sq(sub(prediction, target)), 1.0 / static_cast<double>(prediction.numel()));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " rows");
  }
  const auto lv = logits.values();
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw DimensionError("cross_entropy: label out of range");
    const double* row = lv.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - log_z);
    loss += log_z - row[labels[i]];
  }
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  const double inv_n = 1.0 / static_cast<double>(n);
  return make_op({1}, {loss * inv_n}, "cross_entropy", {logits},
                 [probs = std::move(probs), labels, n, c, inv_n](std::span<const double> g,
                                                                 std::span<const std::span<double>> pg) {
                   if (pg[0].empty()) return;
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t j = 0; j < c; ++j) {
                       const double onehot = labels[i] == j ? 1.0 : 0.0;
                       pg[0][i * c + j] += g[0] * inv_n * (probs[i * c + j] - onehot);
                     }
                   }
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_op(std::move(shape), x.to_vector(), "reshape", {x},
                 [](std::span<const double> g, std::span<const std::span<double>> pg) { accumulate(pg[0], g); });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  as_mat(std::span<double>(out), m, w) = as_mat(x.values(), m, n).middleCols(static_cast<Eigen::Index>(begin),
                                                                            static_cast<Eigen::Index>(w));
  return make_op({m, w}, std::move(out), "slice_cols", {x},
                 [m, n, w, begin](std::span<const double> g, std::span<const std::span<double>> pg) {
                   if (pg[0].empty()) return;
                   as_mat(pg[0], m, n).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(w)) +=
                       as_mat(g, m, w);
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(m * total);
  auto om = as_mat(std::span<double>(out), m, total);
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    widths.push_back(parts[i].cols());
    om.middleCols(static_cast<Eigen::Index>(offsets[i]), static_cast<Eigen::Index>(widths[i])) =
        as_mat(parts[i].values(), m, widths[i]);
  }
  return make_op({m, total}, std::move(out), "concat_cols", parts,
                 [m, total, offsets, widths](std::span<const double> g, std::span<const std::span<double>> pg) {
                   const auto gm = as_mat(g, m, total);
                   for (std::size_t i = 0; i < pg.size(); ++i) {
                     if (pg[i].empty()) continue;
                     as_mat(pg[i], m, widths[i]) +=
                         gm.middleCols(static_cast<Eigen::Index>(offsets[i]), static_cast<Eigen::Index>(widths[i]));
                   }
                 });
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  require_matrix(x, "add_row_vector");
  const std::size_t m = x.rows(), n = x.cols();
  if (v.numel() != n) {
    throw DimensionError("add_row_vector: vector " + shape_str(v.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto vv = v.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += vv[j];
  return make_op({m, n}, std::move(out), "add_row_vector", {x, v},
                 [m, n](std::span<const double> g, std::span<const std::span<double>> pg) {
                   accumulate(pg[0], g);
                   if (pg[1].empty()) return;
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j) pg[1][j] += g[i * n + j];
                 });
}

Tensor add_col_vector(const Tensor& x, const Tensor& v) {
  require_matrix(x, "add_col_vector");
  const std::size_t m = x.rows(), n = x.cols();
  if (v.numel() != m) {
    throw DimensionError("add_col_vector: vector " + shape_str(v.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto vv = v.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += vv[i];
  return make_op({m, n}, std::move(out), "add_col_vector", {x, v},
                 [m, n](std::span<const double> g, std::span<const std::span<double>> pg) {
                   accumulate(pg[0], g);
                   if (pg[1].empty()) return;
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j) pg[1][i] += g[i * n + j];
                 });
}

Tensor scale_cols(const Tensor& x, const Tensor& v) {
  require_matrix(x, "scale_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (v.numel() != n) {
    throw DimensionError("scale_cols: vector " + shape_str(v.shape()) + " does not match " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  const auto vv = v.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * vv[j];
  return make_op({m, n}, std::move(out), "scale_cols", {x, v},
                 [x, v, m, n](std::span<const double> g, std::span<const std::span<double>> pg) {
                   const auto xv = x.values();
                   const auto vv = v.values();
                   for (std::size_t i = 0; i < m; ++i) {
                     for (std::size_t j = 0; j < n; ++j) {
                       const double gij = g[i * n + j];
                       if (!pg[0].empty()) pg[0][i * n + j] += gij * vv[j];
                       if (!pg[1].empty()) pg[1][j] += gij * xv[i * n + j];
                     }
                   }
                 });
}

Tensor mask_select(const Tensor& x, const std::vector<bool>& mask) {
  if (mask.size() != x.numel()) {
    throw DimensionError("mask_select: mask of length " + std::to_string(mask.size()) + " for tensor " +
                         shape_str(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = mask[i] ? xv[i] : 0.0;
  return make_op(x.shape(), std::move(out), "mask_select", {x},
                 [mask](std::span<const double> g, std::span<const std::span<double>> pg) {
                   if (pg[0].empty()) return;
                   for (std::size_t i = 0; i < g.size(); ++i)
                     if (mask[i]) pg[0][i] += g[i];
                 });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm_rows: affine parameters must have " + std::to_string(n) + " entries");
  }
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  return make_op({m, n}, std::move(out), "layer_norm_rows", {x, gamma, beta},
                 [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](
                     std::span<const double> g, std::span<const std::span<double>> pg) {
                   const auto gv = gamma.values();
                   const double inv_n = 1.0 / static_cast<double>(n);
                   for (std::size_t i = 0; i < m; ++i) {
                     double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                     for (std::size_t j = 0; j < n; ++j) {
                       const double gij = g[i * n + j];
                       if (!pg[1].empty()) pg[1][j] += gij * xhat[i * n + j];
                       if (!pg[2].empty()) pg[2][j] += gij;
                       const double dxhat = gij * gv[j];
                       sum_dxhat += dxhat;
                       sum_dxhat_xhat += dxhat * xhat[i * n + j];
                     }
                     if (pg[0].empty()) continue;
                     for (std::size_t j = 0; j < n; ++j) {
                       const double dxhat = g[i * n + j] * gv[j];
                       pg[0][i * n + j] +=
                           inv_std[i] * (dxhat - inv_n * sum_dxhat - xhat[i * n + j] * inv_n * sum_dxhat_xhat);
                     }
                   }
                 });
}

Tensor shift_rows(const Tensor& x, long offset) {
  require_matrix(x, "shift_rows");
  const long m = static_cast<long>(x.rows());
  const std::size_t n = x.cols();
  const auto xv = x.values();
  std::vector<double> out(xv.size(), 0.0);
  for (long i = 0; i < m; ++i) {
    const long src = i - offset;
    if (src < 0 || src >= m) continue;
    std::copy_n(xv.begin() + src * static_cast<long>(n), n, out.begin() + i * static_cast<long>(n));
  }
  return make_op(x.shape(), std::move(out), "shift_rows", {x},
                 [m, n, offset](std::span<const double> g, std::span<const std::span<double>> pg) {
                   if (pg[0].empty()) return;
                   for (long i = 0; i < m; ++i) {
                     const long src = i - offset;
                     if (src < 0 || src >= m) continue;
                     for (std::size_t j = 0; j < n; ++j)
                       pg[0][static_cast<std::size_t>(src) * n + j] += g[static_cast<std::size_t>(i) * n + j];
                   }
                 });
}

}  // namespace hyperadapt
