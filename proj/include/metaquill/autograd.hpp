// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "metaquill/tensor.hpp"

namespace metaquill {

// Gradients keyed by tensor identity. Holding a GradMap keeps the gradient
// tensors (and, under create_graph, their history) alive, nothing else.
class GradMap {
 public:
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  // Gradient for `t`; a zero tensor of t's shape when none reached it.
  Tensor operator[](const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

  void set(const void* id, Tensor grad) { grads_[id] = std::move(grad); }

 private:
  std::unordered_map<const void*, Tensor> grads_;
};

// Reverse pass from a single-element `loss`. Returns the gradient of every
// leaf that requires one. With create_graph the gradients carry history and
// can be differentiated again. The forward graph is left intact, so repeated
// calls give identical results.
GradMap backward(const Tensor& loss, bool create_graph = false);

// Gradients of `loss` with respect to arbitrary tensors in its history (leaf
// or not). Tensors the loss does not depend on receive zeros.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt,
                         bool create_graph = false);

}  // namespace metaquill
