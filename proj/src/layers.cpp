// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/layers.hpp"

#include <cmath>

#include "metaquill/errors.hpp"
#include "metaquill/ops.hpp"

namespace metaquill {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

void init_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                 std::uint64_t seed) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  params[prefix + ".w"] = init_uniform({in, out}, bound, seed, prefix + ".w");
  params[prefix + ".b"] = Tensor(Shape{out}, std::vector<float>(out, 0.0f), true);
}

LstmState lstm_zero_state(std::size_t batch, std::size_t hidden) {
  return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
}

LstmState lstm_cell(const Tensor& x, const LstmState& state, const Tensor& wx, const Tensor& wh,
                    const Tensor& b) {
  const std::size_t d = state.h.dim(1);
  if (wx.dim(1) != 4 * d || wh.dim(0) != d || wh.dim(1) != 4 * d) {
    throw ShapeError("lstm_cell: weights " + shape_str(wx.shape()) + ", " + shape_str(wh.shape()) +
                     " do not match hidden size " + std::to_string(d));
  }
  const Tensor gates = add(add(matmul(x, wx), matmul(state.h, wh)), b);
  const Tensor i = sigmoid(slice(gates, 1, 0, d));
  const Tensor f = sigmoid(slice(gates, 1, d, d));
  const Tensor g = tanh(slice(gates, 1, 2 * d, d));
  const Tensor o = sigmoid(slice(gates, 1, 3 * d, d));
  const Tensor c = add(mul(f, state.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

void init_lstm(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
               std::uint64_t seed) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(hidden));
  params[prefix + ".wx"] = init_uniform({in, 4 * hidden}, bound, seed, prefix + ".wx");
  params[prefix + ".wh"] = init_uniform({hidden, 4 * hidden}, bound, seed, prefix + ".wh");
  params[prefix + ".b"] = Tensor(Shape{4 * hidden}, std::vector<float>(4 * hidden, 0.0f), true);
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValidationError("stack: no tensors");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(p, s));
  }
  return lifted.size() == 1 ? lifted.front() : concat(std::span<const Tensor>(lifted), 0);
}

}  // namespace metaquill
