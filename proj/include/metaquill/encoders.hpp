// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image, category and answer encoders. Feature maps are channels-last
// [h, w, c] tensors.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "metaquill/params.hpp"
#include "metaquill/tensor.hpp"

namespace metaquill {

// Directory of <image_id>.tnsr feature maps plus index.json mapping image
// ids to file names.
class FeatureStore {
 public:
  static FeatureStore open(const std::filesystem::path& dir);
  // Writes one feature map and records it in the in-memory index.
  void put(const std::string& image_id, const Tensor& features);
  // Persists index.json.
  void save_index() const;

  bool contains(const std::string& image_id) const { return index_.count(image_id) != 0; }
  std::size_t size() const { return index_.size(); }
  const std::filesystem::path& dir() const { return dir_; }

  // Frozen rank-3 feature map; throws IoError naming the id when absent and
  // ShapeError when `expected` (if nonempty) differs.
  Tensor load(const std::string& image_id, const Shape& expected = {}) const;

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> index_;
};

Tensor encode_image_precomputed(const std::string& image_id, const FeatureStore& store,
                                const Shape& expected);

struct CnnConfig {
  std::array<std::size_t, 3> widths{8, 16, 16};
  std::size_t channels = 16;
  std::size_t input_size = 32;

  // Spatial extent after three 2x2 poolings and a valid 3x3 convolution.
  Shape output_shape() const;
  void validate() const;
};

// Parameters cnn.conv{1..4}.w [Co,Ci,3,3] and cnn.conv{1..4}.b [Co].
void init_cnn(ParamSet& params, const CnnConfig& cfg, std::uint64_t seed);

// [conv3x3 same -> relu -> maxpool2x2] x 3, then conv3x3 valid. Input
// [3,H,W] with H = W = cfg.input_size; output [h,w,c].
Tensor encode_image_cnn(const Tensor& image, const ParamSet& params, const CnnConfig& cfg);

// Two-layer MLP on one-hot categories: linear -> tanh -> linear.
// Parameters category.l1.{w,b} [n_categories,d_c] and category.l2.{w,b}.
void init_category_encoder(ParamSet& params, std::size_t n_categories, std::size_t d_c,
                           std::uint64_t seed);
Tensor encode_category(int category, const ParamSet& params);
// Batched form, [B, d_c].
Tensor encode_categories(std::span<const int> categories, const ParamSet& params);

// Single-layer LSTM over embedded answer tokens; answer.{wx,wh,b}.
void init_answer_encoder(ParamSet& params, std::size_t d_w, std::size_t d_a, std::uint64_t seed);
// Final hidden state [d_a]. `embedding` is the [V, d_w] word table.
Tensor encode_answer(std::span<const int> tokens, const Tensor& embedding, const ParamSet& params);
// Batched form over sequences of different lengths, [B, d_a]; each row is
// the hidden state after that row's last token.
Tensor encode_answers(const std::vector<std::vector<int>>& answers, const Tensor& embedding,
                      const ParamSet& params);

// Concatenation along the last axis in the order (category, answer). Either
// may be undefined; both undefined is an error.
Tensor combine_side_info(const Tensor& category, const Tensor& answer);

}  // namespace metaquill
