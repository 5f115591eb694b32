// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic shapes corpus. Every image shows coloured shapes over a plain
// background with a ground band along the bottom edge; each image carries one
// templated question whose family is fixed by its answer category.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaquill/dataset.hpp"
#include "metaquill/tensor.hpp"

namespace metaquill {

struct ToySpec {
  int n_categories = 8;
  int images_per_cat = 40;
  int grid = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

// Category (question family) names in generation order. The first
// n_categories are used; the first half of those form the train side.
const std::vector<std::string>& toy_families();
SplitSpec toy_split(int n_categories);

struct ToyItem {
  Record record;
  Tensor image;  // [3, grid, grid], values in [0, 1]
};

std::vector<ToyItem> render_toyset(const ToySpec& spec);

// Writes images/<id>.tnsr, manifest.jsonl, checker_rules.json and
// splitspec.json under out_dir and returns the manifest.
Manifest generate_toyset(const ToySpec& spec, const std::filesystem::path& out_dir);

// Colours, thresholds and layout the checker relies on.
nlohmann::json toy_checker_rules(int grid);

// Recovers the answer to a toy question from pixels alone.
std::string answer_from_image(const Tensor& image, const std::string& category,
                              const std::string& question, const nlohmann::json& rules);

struct CheckReport {
  std::size_t checked = 0;
  std::size_t passed = 0;
  std::vector<std::string> failures;
};

// Re-derives every answer of a generated corpus from its images.
CheckReport check_toyset(const std::filesystem::path& dir);

}  // namespace metaquill
