// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// The full conditional question generator: image encoder, side-information
// encoders, optional scale-shift conditioning and the attention decoder.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaquill/conditioning.hpp"
#include "metaquill/dataset.hpp"
#include "metaquill/decoder.hpp"
#include "metaquill/encoders.hpp"
#include "metaquill/metrics.hpp"
#include "metaquill/params.hpp"
#include "metaquill/text.hpp"

namespace metaquill {

enum class SideInfo { none, category, answer, both };
enum class Backend { precomputed, tiny_cnn };
enum class EmbeddingSource { scratch, pretrained };

std::string to_string(ConditioningMode m);
std::string to_string(SideInfo s);
std::string to_string(Backend b);
std::string to_string(EmbeddingSource e);
ConditioningMode parse_conditioning(const std::string& s);
SideInfo parse_side_info(const std::string& s);
Backend parse_backend(const std::string& s);
EmbeddingSource parse_embedding_source(const std::string& s);

struct ModelConfig {
  ConditioningMode mode = ConditioningMode::scale_shift;
  SideInfo side_info = SideInfo::category;
  Backend backend = Backend::tiny_cnn;
  EmbeddingSource embedding = EmbeddingSource::scratch;
  std::size_t d_w = 16;
  std::size_t d_h = 32;
  std::size_t d_att = 32;
  std::size_t d_p = 32;
  std::size_t d_c = 16;
  std::size_t d_a = 16;
  std::size_t film_hidden = 32;
  CnnConfig cnn;
  // Feature map shape [h,w,c] for the precomputed backend.
  Shape feature_shape{7, 7, 16};
  std::size_t max_len = 20;
  std::size_t max_answer_len = 8;

  bool uses_category() const { return side_info == SideInfo::category || side_info == SideInfo::both; }
  bool uses_answer() const { return side_info == SideInfo::answer || side_info == SideInfo::both; }
  std::size_t side_width() const;
  Shape features_shape() const;
  void validate() const;

  nlohmann::json to_json() const;
  // Expects every key to be present (see RunConfig for default merging).
  static ModelConfig from_json(const nlohmann::json& j);
};

struct Example {
  std::string image_id;
  Tensor image;     // raw [3,H,W]; used when the encoder runs
  Tensor features;  // [h,w,c]; used instead of `image` when set
  int category = -1;
  std::vector<int> answer;
  std::vector<int> question;  // <bos> ... <eos>
  Tokens reference;           // question tokens for scoring
};

using Batch = std::vector<const Example*>;

class Model {
 public:
  // Fresh parameters. `embedding_table` supplies the frozen word table when
  // the embedding source is pretrained and must then be [V, d_w].
  Model(ModelConfig config, Vocabulary vocab, std::vector<std::string> categories,
        std::uint64_t seed, const Tensor& embedding_table = Tensor());

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<std::string>& categories() const { return categories_; }
  std::uint64_t seed() const { return seed_; }

  ParamSet& trainable() { return trainable_; }
  const ParamSet& trainable() const { return trainable_; }
  const ParamSet& frozen() const { return frozen_; }
  // Moves every trainable parameter whose name starts with `prefix` into
  // the frozen set (and back).
  void freeze(const std::string& prefix);
  void unfreeze(const std::string& prefix);
  // Frozen parameters followed by `trainable` overrides.
  ParamSet merged(const ParamSet& trainable) const;

  int category_id(const std::string& name) const;
  // Encodes a record. Answers longer than max_answer_len and questions
  // longer than max_len - 1 words are truncated.
  Example make_example(const Record& r, Tensor image_or_features) const;

  // Replaces each example's raw image by its feature map computed with the
  // current encoder parameters (no gradient).
  void precompute_features(std::vector<Example>& examples) const;

  // [B,P,c] feature batch; runs the CNN on raw images with `params`.
  Tensor features(const ParamSet& params, const Batch& batch) const;
  // Side embedding [B,d_s], or an undefined tensor when no side
  // information is used.
  Tensor side_embedding(const ParamSet& params, const Batch& batch) const;
  // Features after conditioning (scale_shift) or unchanged (no_scale_shift).
  Tensor conditioned(const ParamSet& params, const Batch& batch, const Tensor& features,
                     const Tensor& side) const;

  // Teacher-forced cross-entropy; `trainable` replaces the model's own
  // trainable parameters (adapted copies during meta-learning).
  Tensor loss(const ParamSet& trainable, const Batch& batch) const;
  std::vector<std::vector<int>> generate(const ParamSet& trainable, const Batch& batch) const;

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  std::vector<std::string> categories_;
  std::uint64_t seed_;
  ParamSet trainable_;
  ParamSet frozen_;
};

Batch as_batch(const std::vector<Example>& examples);

// Checkpoint directory: parameters, manifest.json, vocab.txt and
// categories.json. `extra` is stored under the manifest's config.
void save_model(const std::filesystem::path& dir, const Model& model, std::int64_t step,
                const nlohmann::json& extra = nlohmann::json::object());
struct LoadedModel {
  Model model;
  std::int64_t step;
  nlohmann::json config;
};
LoadedModel load_model(const std::filesystem::path& dir);

}  // namespace metaquill
