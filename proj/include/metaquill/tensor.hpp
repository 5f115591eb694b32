// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float tensor with a define-by-run gradient graph.
//
// A Tensor is a cheap handle onto an immutable node. Ops never mutate their
// inputs; each op allocates a fresh node and, when grad mode is on and any
// input requires a gradient, records its inputs and a backward closure. The
// backward closures are themselves written with differentiable ops, so a
// backward pass run with grad mode enabled yields gradients that can be
// differentiated again.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace metaquill {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

// Backward closure: receives the op inputs, the op output and the incoming
// gradient; returns one gradient per input (undefined for inputs that take
// none).
using BackwardFn = std::function<std::vector<Tensor>(
    const std::vector<Tensor>& inputs, const Tensor& output, const Tensor& grad)>;

struct Node {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  ~Node();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, float value);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor vector(std::initializer_list<float> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  float at(std::size_t flat_index) const;
  // Value of a single-element tensor.
  float item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;

  // Fresh leaf with a copy of the data and no history.
  Tensor detach() const;
  // Leaf with independent storage; keeps the requires_grad flag.
  Tensor clone() const;
  // Leaf with a copy of the data and the given requires_grad flag.
  Tensor as_leaf(bool requires_grad) const;

  // Identity of the underlying node; stable for the tensor's lifetime.
  const void* id() const { return node_.get(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Thread-local switch controlling whether ops record history.
class GradMode {
 public:
  static bool enabled();
  static void set(bool enabled);
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(GradMode::enabled()) {
    GradMode::set(enabled);
  }
  ~GradModeGuard() { GradMode::set(previous_); }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

}  // namespace metaquill
