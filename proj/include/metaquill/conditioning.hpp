// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-channel scale and shift of a feature map driven by side information:
// G_i = gamma_i * F_i + beta_i.

#pragma once

#include <cstdint>

#include "metaquill/params.hpp"
#include "metaquill/tensor.hpp"

namespace metaquill {

enum class ConditioningMode { scale_shift, no_scale_shift };

struct ScaleShift {
  Tensor gamma;  // [c] or [B,c]
  Tensor beta;   // same shape as gamma
};

// film.trunk.{w,b} [d_s,hidden], film.gamma.{w,b} and film.beta.{w,b}
// [hidden,c].
void init_film(ParamSet& params, std::size_t d_s, std::size_t hidden, std::size_t channels,
               std::uint64_t seed);

// trunk = tanh(W0 s + b0); gamma = Wg trunk + bg + 1; beta = Wb trunk + bb.
// `s` is [d_s] or [B,d_s].
ScaleShift compute_gamma_beta(const Tensor& s, const ParamSet& params);

// Applies the affine transform channel-wise. Accepts F as [h,w,c] with
// [c] vectors, or as a batch [B,h,w,c] / [B,P,c] with [B,c] vectors.
Tensor apply_film(const Tensor& features, const ScaleShift& ss);

}  // namespace metaquill
