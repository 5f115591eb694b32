// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op checks its output for NaN/Inf and
// throws NumericError naming the op and its operand shapes.
//
// Broadcasting in binary ops is limited to two cases: one operand holds a
// single element, or one operand's shape is a trailing suffix of the other's.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "metaquill/tensor.hpp"

namespace metaquill {

using IndexList = std::shared_ptr<const std::vector<std::int64_t>>;

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float value);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

// [m,k]x[k,n] -> [m,n], or batched [b,m,k]x[b,k,n] -> [b,m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Numerically stabilised by max subtraction.
Tensor softmax(const Tensor& x, std::size_t axis);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim);
// Tiles an axis of extent 1 to extent n. Adjoint of sum_axis(keepdim=true).
Tensor repeat_axis(const Tensor& x, std::size_t axis, std::size_t n);
// Sum a broadcast gradient back down to `shape` and its adjoint.
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
// Halves the last two (spatial) axes, keeping the max of each 2x2 window.
Tensor max_pool2x2(const Tensor& x);

// Index movement.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// out[k] = x[index[k]], or 0 where index[k] < 0.
Tensor gather_flat(const Tensor& x, IndexList index, Shape out_shape);
// out[index[k]] += x[k]; adjoint of gather_flat.
Tensor scatter_flat(const Tensor& x, IndexList index, Shape out_shape);
// Rows of a [V,d] table -> [n,d]. Out-of-range ids raise ValidationError.
Tensor embed_lookup(const Tensor& table, std::span<const int> ids);

// Convolution support. im2col lays 3x3 patches of a [C,H,W] input out as
// rows of a [Ho*Wo, C*9] matrix.
enum class Padding { valid, same };
Tensor im2col(const Tensor& input, std::size_t stride, Padding padding);
// Cross-correlation of [C_in,H,W] with [C_out,C_in,3,3] -> [C_out,Ho,Wo].
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              Padding padding);

// Loss. Per-row -log softmax(logits)[target] for [B,V] logits; rows whose
// target is -1 contribute 0 and receive no gradient.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
// Scalar loss for a single [V] logit vector.
Tensor cross_entropy(const Tensor& logits, int target);

}  // namespace metaquill
