// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rotation-prediction pretext task and joint pretraining of the generator
// with a 4-way rotation classifier on top of the image encoder.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "metaquill/model.hpp"

namespace metaquill {

// Class k stands for a counter-clockwise rotation by k * 90 degrees.
constexpr int kRotationClasses = 4;

// Rotates a square [C,H,W] image counter-clockwise by label * 90 degrees,
// out[c][i][j] = in[c][j][H-1-i] per quarter turn.
Tensor rotate_image(const Tensor& image, int label);

// Creates rotation.conv.{w,b} ([R,c,3,3], [R]) and rotation.fc.{w,b}
// ([R,4], [4]) for an encoder with `channels` output channels.
void init_rotation_head(ParamSet& params, std::size_t channels, std::size_t head_channels,
                        std::uint64_t seed);
bool has_rotation_head(const ParamSet& params);

// [4] logits for one image: encoder, 3x3 conv, relu, spatial mean, linear.
Tensor rotation_logits(const Tensor& image, const ParamSet& params, const CnnConfig& cnn);
// Cross-entropy of the logits for the rotated image against `label`.
Tensor rotation_loss(const Tensor& image, int label, const ParamSet& params, const CnnConfig& cnn);
// Mean rotation loss over images rotated by the matching labels.
Tensor rotation_loss(std::span<const Tensor> images, std::span<const int> labels,
                     const ParamSet& params, const CnnConfig& cnn);

// Fraction of (image, rotation) pairs, all four rotations per image,
// classified correctly.
double rotation_accuracy(std::span<const Tensor> images, const ParamSet& params,
                         const CnnConfig& cnn);

// Copy without the rotation head; ValidationError if there is none.
ParamSet strip_rotation_head(const ParamSet& params);

// Number of rotate_image / rotation_logits calls made by this process.
std::uint64_t rotation_op_count();

struct SelfSupConfig {
  bool enabled = true;
  double lambda = 1.0;
  int steps = 600;
  int batch_size = 8;
  float lr = 0.1f;
  double clip_norm = 10.0;
  std::size_t head_channels = 16;
  std::uint64_t seed = 0;

  // The rotation branch runs only when enabled with a nonzero weight.
  bool rotation_active() const { return enabled && lambda != 0.0; }
  void validate() const;
  nlohmann::json to_json() const;
  static SelfSupConfig from_json(const nlohmann::json& j);
};

struct PretrainLogRow {
  std::int64_t iter = 0;
  double loss = 0;
  double vqg_loss = 0;
  double rot_loss = 0;  // 0 when the rotation branch is off
  double wallclock_ms = 0;
};

// Indices of the mini-batch for `step`, drawn without replacement and
// independent of earlier steps.
std::vector<std::size_t> pretrain_batch(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                        std::int64_t step);

// Mini-batch SGD on L_vqg + lambda * L_rot over steps [start_step,
// cfg.steps). Each batch image gets one uniformly drawn rotation for the
// rotation branch; the generator sees it unrotated. Creates the rotation
// head when the branch is active and the model lacks one. Examples must
// carry raw images.
void pretrain_joint(Model& model, const std::vector<Example>& examples, const SelfSupConfig& cfg,
                    std::int64_t start_step = 0,
                    const std::function<void(const PretrainLogRow&)>& on_step = {});

}  // namespace metaquill
