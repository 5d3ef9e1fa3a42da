// SPDX-License-Identifier: Apache-2.0
//
// Differentiable forward ops. Binary elementwise ops broadcast with the
// usual trailing-axis rules; gradients are summed back over broadcast axes.
#pragma once

#include <vector>

#include "r2g/tensor.hpp"

namespace r2g {

// elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(sigmoid(x)), stable for large |x|.
Tensor log_sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
/// max(x, lo); no gradient flows through clamped entries.
Tensor clamp_min(const Tensor& x, double lo);
/// x^p for a constant exponent; x must be positive unless p is an integer.
Tensor pow(const Tensor& x, double p);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// linear algebra
/// [..., M, K] x [..., K, N] -> [..., M, N] with broadcast batch axes.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swap two axes.
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape shape);

// indexing
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Stacks equal-shape tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);

// reductions
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
/// Max along `axis`; first index wins on ties.
Tensor max(const Tensor& x, int axis, bool keepdim = false);
/// Max along `axis` over entries whose flag in `valid` is set.
Tensor max(const Tensor& x, int axis, const Mask& valid, bool keepdim = false);

// normalization
/// Softmax along `axis`. Invalid entries get additive -inf before the
/// exponent and come out exactly 0. A slice with no valid entry throws
/// DegenerateError.
Tensor softmax(const Tensor& x, int axis);
Tensor softmax(const Tensor& x, int axis, const Mask& valid);
Tensor log_softmax(const Tensor& x, int axis);
/// Normalizes over the last axis, then applies gain and bias of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// x / sqrt(sum(x^2) + eps) along the last axis.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

/// x: [T, C_in], weight: [kernel, C_in, C_out], bias: [C_out] or undefined.
/// Output length floor((T + 2*padding - kernel) / stride) + 1.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

}  // namespace r2g
