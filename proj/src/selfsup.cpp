// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/selfsup.hpp"

#include <atomic>
#include <chrono>
#include <cmath>

#include "metaquill/autograd.hpp"
#include "metaquill/errors.hpp"
#include "metaquill/layers.hpp"
#include "metaquill/meta_learning.hpp"
#include "metaquill/ops.hpp"

namespace metaquill {

using nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_rotation_ops{0};

const std::string kHeadPrefix = "rotation.";

}  // namespace

std::uint64_t rotation_op_count() { return g_rotation_ops.load(); }

Tensor rotate_image(const Tensor& image, int label) {
  ++g_rotation_ops;
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw ShapeError("rotate_image: expected a square [C,H,W] image, got " +
                     shape_str(image.shape()));
  }
  if (label < 0 || label >= kRotationClasses) {
    throw ValidationError("rotate_image: rotation label " + std::to_string(label) +
                          " outside 0..3");
  }
  const std::size_t c = image.dim(0), h = image.dim(1);
  // Source offset for each output pixel, composed one quarter turn at a time.
  std::vector<std::int64_t> src(c * h * h);
  for (std::size_t k = 0; k < src.size(); ++k) src[k] = static_cast<std::int64_t>(k);
  for (int turn = 0; turn < label; ++turn) {
    std::vector<std::int64_t> next(src.size());
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < h; ++j) {
          next[(ch * h + i) * h + j] = src[(ch * h + j) * h + (h - 1 - i)];
        }
      }
    }
    src = std::move(next);
  }
  return gather_flat(image, std::make_shared<const std::vector<std::int64_t>>(std::move(src)),
                     image.shape());
}

void init_rotation_head(ParamSet& params, std::size_t channels, std::size_t head_channels,
                        std::uint64_t seed) {
  if (channels == 0 || head_channels == 0) {
    throw ValidationError("rotation head: channel counts must be positive");
  }
  const float bound = std::sqrt(6.0f / static_cast<float>(channels * 9));
  params["rotation.conv.w"] =
      init_uniform({head_channels, channels, 3, 3}, bound, seed, "rotation.conv.w");
  params["rotation.conv.b"] = Tensor(Shape{head_channels}, std::vector<float>(head_channels, 0.0f), true);
  init_linear(params, "rotation.fc", head_channels, kRotationClasses, seed);
}

bool has_rotation_head(const ParamSet& params) {
  auto it = params.lower_bound(kHeadPrefix);
  return it != params.end() && it->first.compare(0, kHeadPrefix.size(), kHeadPrefix) == 0;
}

Tensor rotation_logits(const Tensor& image, const ParamSet& params, const CnnConfig& cnn) {
  ++g_rotation_ops;
  const Tensor features = encode_image_cnn(image, params, cnn);  // [h,w,c]
  const std::size_t h = features.dim(0), w = features.dim(1), c = features.dim(2);
  const Tensor chw = reshape(transpose(reshape(features, {h * w, c})), {c, h, w});
  const Tensor& kw = param(params, "rotation.conv.w");
  const std::size_t r = kw.dim(0);
  const Tensor rows = relu(add(matmul(im2col(chw, 1, Padding::same),
                                      transpose(reshape(kw, {r, kw.numel() / r}))),
                               param(params, "rotation.conv.b")));
  const Tensor pooled = scale(sum_axis(rows, 0, true), 1.0f / static_cast<float>(h * w));
  return reshape(linear(pooled, param(params, "rotation.fc.w"), param(params, "rotation.fc.b")),
                 {kRotationClasses});
}

Tensor rotation_loss(const Tensor& image, int label, const ParamSet& params, const CnnConfig& cnn) {
  return cross_entropy(rotation_logits(rotate_image(image, label), params, cnn), label);
}

Tensor rotation_loss(std::span<const Tensor> images, std::span<const int> labels,
                     const ParamSet& params, const CnnConfig& cnn) {
  if (images.empty() || images.size() != labels.size()) {
    throw ValidationError("rotation_loss: need one label per image and at least one image");
  }
  std::vector<Tensor> logits;
  logits.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    logits.push_back(rotation_logits(rotate_image(images[i], labels[i]), params, cnn));
  }
  return mean(cross_entropy(stack(logits), labels));
}

double rotation_accuracy(std::span<const Tensor> images, const ParamSet& params,
                         const CnnConfig& cnn) {
  if (images.empty()) throw ValidationError("rotation_accuracy: no images");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (const auto& img : images) {
    for (int label = 0; label < kRotationClasses; ++label) {
      const Tensor logits = rotation_logits(rotate_image(img, label), params, cnn);
      int best = 0;
      for (int k = 1; k < kRotationClasses; ++k) {
        if (logits.at(k) > logits.at(best)) best = k;
      }
      if (best == label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(images.size() * kRotationClasses);
}

ParamSet strip_rotation_head(const ParamSet& params) {
  if (!has_rotation_head(params)) {
    throw ValidationError("strip_rotation_head: no rotation head parameters present");
  }
  ParamSet out;
  for (const auto& [name, p] : params) {
    if (name.compare(0, kHeadPrefix.size(), kHeadPrefix) != 0) out.emplace(name, p);
  }
  return out;
}

void SelfSupConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0) throw ValidationError("selfsup: lambda must be >= 0");
  if (steps < 0) throw ValidationError("selfsup: steps must be >= 0");
  if (batch_size < 1) throw ValidationError("selfsup: batch_size must be >= 1");
  if (!(lr > 0)) throw ValidationError("selfsup: lr must be positive");
  if (head_channels == 0) throw ValidationError("selfsup: head_channels must be positive");
}

json SelfSupConfig::to_json() const {
  return {{"enabled", enabled}, {"lambda", lambda},         {"steps", steps},
          {"batch_size", batch_size}, {"lr", json_float(lr)},           {"clip_norm", clip_norm},
          {"head_channels", head_channels}, {"seed", seed}};
}

SelfSupConfig SelfSupConfig::from_json(const json& j) {
  SelfSupConfig c;
  try {
    c.enabled = j.at("enabled").get<bool>();
    c.lambda = j.at("lambda").get<double>();
    c.steps = j.at("steps").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<float>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.head_channels = j.at("head_channels").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("selfsup config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::size_t> pretrain_batch(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                        std::int64_t step) {
  if (n == 0) throw ValidationError("pretrain: no training examples");
  auto rng = iteration_rng(seed, step, 0);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const std::size_t k = std::min(batch_size, n);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

void pretrain_joint(Model& model, const std::vector<Example>& examples, const SelfSupConfig& cfg,
                    std::int64_t start_step,
                    const std::function<void(const PretrainLogRow&)>& on_step) {
  cfg.validate();
  if (examples.empty()) throw ValidationError("pretrain: no training examples");
  const bool rotation = cfg.rotation_active();
  const ModelConfig& mc = model.config();
  if (rotation) {
    if (mc.backend != Backend::tiny_cnn) {
      throw ValidationError(
          "pretrain: the rotation task needs the tiny_cnn encoder backend; set lambda to 0 or "
          "disable selfsup for precomputed features");
    }
    if (!has_rotation_head(model.trainable())) {
      init_rotation_head(model.trainable(), mc.cnn.channels, cfg.head_channels, model.seed());
    }
  }
  for (std::int64_t step = start_step; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    Batch batch;
    for (auto i : pretrain_batch(examples.size(), static_cast<std::size_t>(cfg.batch_size),
                                 cfg.seed, step)) {
      batch.push_back(&examples[i]);
    }
    ParamSet& params = model.trainable();
    const Tensor vqg = model.loss(params, batch);
    Tensor total = vqg;
    double rot_value = 0;
    if (rotation) {
      auto rng = iteration_rng(cfg.seed, step, 1);
      std::uniform_int_distribution<int> pick(0, kRotationClasses - 1);
      std::vector<Tensor> images;
      std::vector<int> labels;
      for (const Example* ex : batch) {
        if (!ex->image.defined()) {
          throw ValidationError("pretrain: example '" + ex->image_id + "' has no raw image");
        }
        images.push_back(ex->image);
        labels.push_back(pick(rng));
      }
      const Tensor rot = rotation_loss(images, labels, model.merged(params), mc.cnn);
      rot_value = rot.item();
      total = add(vqg, scale(rot, static_cast<float>(cfg.lambda)));
    }
    const std::vector<Tensor> vals = values(params);
    const std::vector<Tensor> grads = grad(total, vals);
    std::map<std::string, Tensor> named;
    std::size_t k = 0;
    for (const auto& [name, p] : params) named.emplace(name, grads[k++]);
    if (cfg.clip_norm > 0) clip_grad_norm(named, cfg.clip_norm);
    params = sgd_step(params, named, cfg.lr);
    const auto t1 = std::chrono::steady_clock::now();
    if (on_step) {
      on_step({step, total.item(), vqg.item(), rot_value,
               std::chrono::duration<double, std::milli>(t1 - t0).count()});
    }
  }
}

}  // namespace metaquill
