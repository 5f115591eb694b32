// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/conditioning.hpp"

#include "metaquill/errors.hpp"
#include "metaquill/layers.hpp"
#include "metaquill/ops.hpp"

namespace metaquill {

void init_film(ParamSet& params, std::size_t d_s, std::size_t hidden, std::size_t channels,
               std::uint64_t seed) {
  init_linear(params, "film.trunk", d_s, hidden, seed);
  init_linear(params, "film.gamma", hidden, channels, seed);
  init_linear(params, "film.beta", hidden, channels, seed);
}

ScaleShift compute_gamma_beta(const Tensor& s, const ParamSet& params) {
  const Tensor& w0 = param(params, "film.trunk.w");
  if (s.rank() < 1 || s.rank() > 2 || s.dim(s.rank() - 1) != w0.dim(0)) {
    throw ShapeError("compute_gamma_beta: side embedding " + shape_str(s.shape()) +
                     " does not match trunk input width " + std::to_string(w0.dim(0)));
  }
  const bool single = s.rank() == 1;
  const Tensor x = single ? reshape(s, {1, s.dim(0)}) : s;
  const Tensor trunk = tanh(linear(x, w0, param(params, "film.trunk.b")));
  Tensor gamma = add_scalar(
      linear(trunk, param(params, "film.gamma.w"), param(params, "film.gamma.b")), 1.0f);
  Tensor beta = linear(trunk, param(params, "film.beta.w"), param(params, "film.beta.b"));
  if (single) {
    gamma = reshape(gamma, {gamma.dim(1)});
    beta = reshape(beta, {beta.dim(1)});
  }
  return {gamma, beta};
}

Tensor apply_film(const Tensor& features, const ScaleShift& ss) {
  const Shape& fs = features.shape();
  const Shape& gs = ss.gamma.shape();
  if (gs != ss.beta.shape()) {
    throw ShapeError("apply_film: gamma " + shape_str(gs) + " and beta " +
                     shape_str(ss.beta.shape()) + " differ");
  }
  if (fs.empty() || gs.empty() || fs.back() != gs.back()) {
    throw ShapeError("apply_film: feature map " + shape_str(fs) + " has a different channel count "
                     "than gamma " + shape_str(gs));
  }
  if (gs.size() == 1) return add(mul(features, ss.gamma), ss.beta);
  if (gs.size() != 2 || fs.size() < 3 || fs[0] != gs[0]) {
    throw ShapeError("apply_film: batched gamma " + shape_str(gs) + " does not match features " +
                     shape_str(fs));
  }
  const std::size_t batch = fs[0], c = fs.back();
  const std::size_t positions = features.numel() / (batch * c);
  const Tensor f = reshape(features, {batch, positions, c});
  auto spread = [&](const Tensor& v) { return repeat_axis(reshape(v, {batch, 1, c}), 1, positions); };
  return reshape(add(mul(f, spread(ss.gamma)), spread(ss.beta)), fs);
}

}  // namespace metaquill
