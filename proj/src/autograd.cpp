// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/autograd.hpp"

#include <unordered_set>
#include <utility>

#include "metaquill/errors.hpp"
#include "metaquill/ops.hpp"

namespace metaquill {

Tensor GradMap::operator[](const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return it->second;
}

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

// Post-order over the nodes that carry gradient history.
std::vector<NodePtr> topological_order(const NodePtr& root) {
  std::vector<NodePtr> order;
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

// Runs the reverse pass; `keep` decides which nodes' gradients survive.
template <typename Keep>
std::unordered_map<const void*, Tensor> run_backward(const Tensor& loss, bool create_graph,
                                                     Keep keep) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a single-element tensor, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw ValidationError("backward: loss is detached from every parameter");
  }
  GradModeGuard mode(create_graph);
  const auto order = topological_order(loss.node());
  std::unordered_map<const void*, Tensor> acc;
  acc.emplace(loss.id(), Tensor::ones(loss.shape()));
  std::unordered_map<const void*, Tensor> kept;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodePtr& node = *it;
    auto found = acc.find(node.get());
    if (found == acc.end()) continue;
    Tensor g = std::move(found->second);
    acc.erase(found);
    if (keep(node)) kept.emplace(node.get(), g);
    if (!node->backward) continue;

    std::vector<Tensor> inputs;
    inputs.reserve(node->inputs.size());
    for (const auto& in : node->inputs) inputs.push_back(Tensor::from_node(in));
    std::vector<Tensor> grads = node->backward(inputs, Tensor::from_node(node), g);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].requires_grad() || i >= grads.size() || !grads[i].defined()) continue;
      if (grads[i].shape() != inputs[i].shape()) {
        throw ShapeError(std::string("backward: op '") + node->op + "' produced gradient " +
                         shape_str(grads[i].shape()) + " for input " +
                         shape_str(inputs[i].shape()));
      }
      auto slot = acc.find(inputs[i].id());
      if (slot == acc.end()) {
        acc.emplace(inputs[i].id(), std::move(grads[i]));
      } else {
        slot->second = add(slot->second, grads[i]);
      }
    }
  }
  return kept;
}

}  // namespace

GradMap backward(const Tensor& loss, bool create_graph) {
  auto kept = run_backward(loss, create_graph, [](const NodePtr& n) { return !n->backward; });
  GradMap result;
  for (auto& [id, g] : kept) result.set(id, std::move(g));
  return result;
}

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, bool create_graph) {
  std::unordered_set<const void*> wanted;
  for (const auto& t : wrt) wanted.insert(t.id());
  auto kept = run_backward(loss, create_graph,
                           [&](const NodePtr& n) { return wanted.count(n.get()) != 0; });
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto it = kept.find(t.id());
    out.push_back(it != kept.end() ? it->second : Tensor::zeros(t.shape()));
  }
  return out;
}

}  // namespace metaquill
