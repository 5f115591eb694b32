// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace metaquill::testing_fd {

struct FdStats {
  std::size_t checks = 0;
  std::size_t failures = 0;
  std::vector<std::string> messages;  // first few failures

  void expect(bool ok, const std::string& what) {
    ++checks;
    if (ok) return;
    ++failures;
    if (messages.size() < 20) messages.push_back(what);
  }
};

// Reverse mode against central differences, relative tolerance 1e-3.
void fd_arithmetic(FdStats& stats);
void fd_elementwise(FdStats& stats);
void fd_matmul(FdStats& stats);
void fd_softmax(FdStats& stats);
void fd_reductions(FdStats& stats);
void fd_max_pool(FdStats& stats);
void fd_indexing(FdStats& stats);
void fd_convolution(FdStats& stats);
void fd_cross_entropy(FdStats& stats);
// Gradients of gradients against differences of first gradients.
void second_order_fd(FdStats& stats);
// Double backward on random polynomials against closed forms, within 1e-5.
void second_order_polynomials(FdStats& stats);

using Group = std::pair<const char*, void (*)(FdStats&)>;

inline const std::vector<Group>& all_groups() {
  static const std::vector<Group> groups{
      {"arithmetic", fd_arithmetic},   {"elementwise", fd_elementwise},
      {"matmul", fd_matmul},           {"softmax", fd_softmax},
      {"reductions", fd_reductions},   {"max_pool", fd_max_pool},
      {"indexing", fd_indexing},       {"convolution", fd_convolution},
      {"cross_entropy", fd_cross_entropy}, {"second_order", second_order_fd},
      {"polynomials", second_order_polynomials}};
  return groups;
}

}  // namespace metaquill::testing_fd
