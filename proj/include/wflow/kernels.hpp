#pragma once

// Eager kernels for the closed primitive set. Each kernel validates shapes
// (throwing ShapeError) and rejects non-finite results (throwing NumericError).
// The same kernels back the recording tape, so eager and taped evaluation agree
// bit-for-bit.

#include <cstddef>

#include "wflow/tensor.hpp"

namespace wflow {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
/// a (n x k) times b (k x p).
Tensor matmul(const Tensor& a, const Tensor& b);
/// x W^T + b with x (m x in), W (out x in), b (1 x out) broadcast over rows.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
/// x W^T.
Tensor linear(const Tensor& x, const Tensor& w);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
/// Sum of all entries, 1x1.
Tensor sum(const Tensor& a);
/// Per-row sum, m x 1.
Tensor row_sum(const Tensor& a);
/// Mean of all entries, 1x1.
Tensor mean(const Tensor& a);
/// Column-wise concatenation of equal-height tensors.
Tensor concat(const Tensor& a, const Tensor& b);
/// Columns [start, start + count).
Tensor slice(const Tensor& a, std::size_t start, std::size_t count);

/// Constant tensor with the same backend as `like` (identity for eager tensors).
inline Tensor constant_like(const Tensor& /*like*/, Tensor value) { return value; }
inline const Tensor& value_of(const Tensor& t) { return t; }

void require_finite(const Tensor& t, const char* what);

}  // namespace wflow
