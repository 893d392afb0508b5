// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

// Broadcasting is limited to same-shape operands or a single-element operand
// on either side. Anything else raises DimensionError.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);

/// Max-shifted softmax along `axis`. Throws NumericError on non-finite input.
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor frobenius_sq(const Tensor& x);
/// Mean squared error between equally shaped tensors.
Tensor mse(const Tensor& prediction, const Tensor& target);
/// Mean cross-entropy of row-wise logits [n x classes] against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

Tensor reshape(const Tensor& x, Shape shape);
/// Columns [begin, end) of a matrix.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// x[m x n] + v[n] added to every row.
Tensor add_row_vector(const Tensor& x, const Tensor& v);
/// x[m x n] + v[m] added to every column.
Tensor add_col_vector(const Tensor& x, const Tensor& v);
/// x[m x n] * diag(v[n]).
Tensor scale_cols(const Tensor& x, const Tensor& v);

/// Element i passes through where mask[i] is set and becomes exactly +0.0
/// elsewhere. Gradient is blocked at masked positions.
Tensor mask_select(const Tensor& x, const std::vector<bool>& mask);

/// Row-wise layer normalization with affine gamma[n], beta[n].
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-12);

/// out[i] = x[i - offset] for rows, zero where the source row is out of range.
Tensor shift_rows(const Tensor& x, long offset);

}  // namespace hyperadapt
