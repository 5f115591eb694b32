// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "metaquill/params.hpp"
#include "metaquill/tensor.hpp"

namespace testing {

inline bool same_values(const metaquill::Tensor& a, const metaquill::Tensor& b) {
  const auto x = a.data(), y = b.data();
  return a.shape() == b.shape() && std::equal(x.begin(), x.end(), y.begin(), y.end());
}

inline bool same_params(const metaquill::ParamSet& a, const metaquill::ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !same_values(ia->second, ib->second)) return false;
  }
  return true;
}

inline double max_abs_diff(const metaquill::Tensor& a, const metaquill::Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.at(i)) - b.at(i)));
  return m;
}

inline metaquill::Tensor random_tensor(const metaquill::Shape& shape, std::mt19937& rng,
                                       float bound = 1.0f, bool requires_grad = false) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> v(metaquill::numel(shape));
  for (auto& x : v) x = dist(rng);
  return metaquill::Tensor(shape, std::move(v), requires_grad);
}

}  // namespace testing
