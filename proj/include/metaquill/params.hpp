// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaquill/autograd.hpp"
#include "metaquill/tensor.hpp"

namespace metaquill {

// Named parameters, ordered by name. Iteration order is the canonical order
// for flattening, clipping and serialisation.
using ParamSet = std::map<std::string, Tensor>;

// Looks up a parameter, throwing ValidationError naming it when absent.
const Tensor& param(const ParamSet& params, const std::string& name);

// Uniform in [-bound, bound], seeded from (seed, name) so the value of a
// parameter does not depend on which other parameters exist.
Tensor init_uniform(const Shape& shape, float bound, std::uint64_t seed, const std::string& name);

// Independent leaf copies with requires_grad set.
ParamSet clone_params(const ParamSet& params);
// Leaf copies with no gradient tracking.
ParamSet detach_params(const ParamSet& params);

std::vector<Tensor> values(const ParamSet& params);
std::vector<std::string> names(const ParamSet& params);
std::size_t count_scalars(const ParamSet& params);

// The double closest to the shortest decimal that reads back as `v`, so
// config echoes print 0.1 rather than 0.10000000149011612.
double json_float(float v);

// p <- p - lr * g for every name in `grads`, producing fresh leaves.
ParamSet sgd_step(const ParamSet& params, const std::map<std::string, Tensor>& grads, float lr);

// Rescales `grads` in place so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::map<std::string, Tensor>& grads, double max_norm);

struct Checkpoint {
  ParamSet params;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  // Names that must not be updated when reloaded (frozen tables, encoders).
  std::vector<std::string> frozen;
};

// Directory layout: one <name>.tnsr per parameter plus manifest.json.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace metaquill
