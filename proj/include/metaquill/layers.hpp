// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "metaquill/params.hpp"
#include "metaquill/tensor.hpp"

namespace metaquill {

// x[B,in] . w[in,out] + b[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Adds <prefix>.w [in,out] (uniform +-1/sqrt(in)) and <prefix>.b [out] (zeros).
void init_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                 std::uint64_t seed);

struct LstmState {
  Tensor h;  // [B,d]
  Tensor c;  // [B,d]
};

LstmState lstm_zero_state(std::size_t batch, std::size_t hidden);

// One standard LSTM update. Gate pre-activations are x.wx + h.wh + b laid
// out as [input, forget, cell, output] blocks of width d.
LstmState lstm_cell(const Tensor& x, const LstmState& state, const Tensor& wx, const Tensor& wh,
                    const Tensor& b);

// Adds <prefix>.wx [in,4d], <prefix>.wh [d,4d] and <prefix>.b [4d].
void init_lstm(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
               std::uint64_t seed);

// Stacks per-example tensors of identical shape along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);

}  // namespace metaquill
