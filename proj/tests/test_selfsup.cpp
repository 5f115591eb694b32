// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "metaquill/autograd.hpp"
#include "metaquill/errors.hpp"
#include "metaquill/meta_learning.hpp"
#include "metaquill/ops.hpp"
#include "metaquill/selfsup.hpp"
#include "toy_world.hpp"

using namespace metaquill;

namespace {

const testing::ToyWorld& world() {
  static const testing::ToyWorld w = testing::make_toy_world(4);
  return w;
}

// Pixel (c, i, j) of a [C,n,n] image after one counter-clockwise quarter turn.
float quarter_turn_oracle(const Tensor& img, std::size_t c, std::size_t i, std::size_t j) {
  const std::size_t n = img.dim(1);
  return img.at((c * n + j) * n + (n - 1 - i));
}

SelfSupConfig quick(double lambda) {
  SelfSupConfig c;
  c.lambda = lambda;
  c.steps = 4;
  c.batch_size = 3;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("rotation: 2x2 index oracle and label 0 identity") {
  const Tensor img({1, 2, 2}, {1, 2, 3, 4});
  CHECK(testing::same_values(rotate_image(img, 1), Tensor({1, 2, 2}, {2, 4, 1, 3})));
  CHECK(testing::same_values(rotate_image(img, 2), Tensor({1, 2, 2}, {4, 3, 2, 1})));
  CHECK(testing::same_values(rotate_image(img, 3), Tensor({1, 2, 2}, {3, 1, 4, 2})));
  CHECK(testing::same_values(rotate_image(img, 0), img));
}

TEST_CASE("rotation: quarter turns form a cyclic group of order 4") {
  std::mt19937 rng(1);
  for (std::size_t n = 1; n <= 6; ++n) {
    const Tensor img = testing::random_tensor({3, n, n}, rng);
    const Tensor once = rotate_image(img, 1);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) CHECK(once.at((c * n + i) * n + j) == quarter_turn_oracle(img, c, i, j));
      }
    }
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        CHECK(testing::same_values(rotate_image(rotate_image(img, a), b), rotate_image(img, (a + b) % 4)));
      }
    }
  }
  CHECK_THROWS_AS(rotate_image(Tensor::zeros({3, 2, 3}), 1), ShapeError);
  CHECK_THROWS_AS(rotate_image(Tensor::zeros({3, 2, 2}), 4), ValidationError);
}

TEST_CASE("rotation head with a zero classifier gives ln 4 and chance accuracy") {
  ParamSet ps;
  const CnnConfig cnn;
  init_cnn(ps, cnn, 1);
  init_rotation_head(ps, cnn.channels, 8, 1);
  ps["rotation.fc.w"] = Tensor::zeros(ps.at("rotation.fc.w").shape()).as_leaf(true);
  ps["rotation.fc.b"] = Tensor::zeros({4}).as_leaf(true);
  const Tensor& img = world().train_items[0].image;
  for (int label = 0; label < 4; ++label) {
    CHECK(rotation_loss(img, label, ps, cnn).item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  }
  // A bias toward class 0 predicts "unrotated" for every input.
  ps["rotation.fc.b"] = Tensor::vector({1, 0, 0, 0}).as_leaf(true);
  std::vector<Tensor> images{img, world().train_items[1].image};
  CHECK(rotation_accuracy(images, ps, cnn) == 0.25);
}

TEST_CASE("rotation loss gradient reaches the first encoder layer") {
  ParamSet ps;
  const CnnConfig cnn;
  init_cnn(ps, cnn, 2);
  init_rotation_head(ps, cnn.channels, 8, 2);
  const Tensor& img = world().train_items[3].image;
  const Tensor w = ps.at("cnn.conv1.w");
  const Tensor g = grad(rotation_loss(img, 2, ps, cnn), std::vector<Tensor>{w})[0];
  double total = 0;
  for (float v : g.data()) total += std::abs(v);
  CHECK(total > 0);
  std::mt19937 rng(3);
  for (int k = 0; k < 8; ++k) {
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, w.numel() - 1)(rng);
    auto at = [&](float delta) {
      std::vector<float> v(w.data().begin(), w.data().end());
      v[i] += delta;
      ParamSet p = ps;
      p["cnn.conv1.w"] = Tensor(w.shape(), std::move(v));
      return double(rotation_loss(img, 2, p, cnn).item());
    };
    const double fd = (at(1e-2f) - at(-1e-2f)) / 2e-2;
    CHECK(std::abs(g.at(i) - fd) <= 2e-3 + 2e-2 * std::abs(fd));
  }
}

TEST_CASE("pretrain batches are distinct, sized and reproducible") {
  for (std::int64_t step = 0; step < 50; ++step) {
    const auto b = pretrain_batch(20, 8, 4, step);
    CHECK(b.size() == 8);
    CHECK(std::set<std::size_t>(b.begin(), b.end()).size() == 8);
    for (auto i : b) CHECK(i < 20);
    CHECK(b == pretrain_batch(20, 8, 4, step));
  }
  CHECK(pretrain_batch(5, 8, 4, 0).size() == 5);
}

TEST_CASE("lambda 0 is a plain supervised loop; disabled is the same") {
  const ModelConfig mc = testing::small_model_config();
  auto a = world().model(mc, 5);
  auto b = world().model(mc, 5);
  auto c = world().model(mc, 5);
  const auto ex = testing::ToyWorld::examples(*a, world().train_items);
  const SelfSupConfig cfg = quick(0.0);
  const std::uint64_t ops = rotation_op_count();
  std::vector<double> rot;
  pretrain_joint(*a, ex, cfg, 0, [&](const PretrainLogRow& r) { rot.push_back(r.rot_loss); });
  CHECK(rotation_op_count() == ops);
  CHECK(rot == std::vector<double>(4, 0.0));
  CHECK_FALSE(has_rotation_head(a->trainable()));

  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    Batch batch;
    for (auto i : pretrain_batch(ex.size(), cfg.batch_size, cfg.seed, step)) batch.push_back(&ex[i]);
    const GradMap g = backward(b->loss(b->trainable(), batch));
    std::map<std::string, Tensor> named;
    for (const auto& [name, p] : b->trainable()) named.emplace(name, g[p]);
    clip_grad_norm(named, cfg.clip_norm);
    b->trainable() = sgd_step(b->trainable(), named, cfg.lr);
  }
  CHECK(testing::same_params(a->trainable(), b->trainable()));

  SelfSupConfig off = quick(1.0);
  off.enabled = false;
  pretrain_joint(*c, ex, off);
  CHECK(testing::same_params(a->trainable(), c->trainable()));
}

TEST_CASE("joint objective adds the weighted rotation loss") {
  const ModelConfig mc = testing::small_model_config();
  auto m = world().model(mc, 6);
  const auto ex = testing::ToyWorld::examples(*m, world().train_items);
  SelfSupConfig cfg = quick(0.5);
  cfg.steps = 1;
  std::vector<PretrainLogRow> rows;
  pretrain_joint(*m, ex, cfg, 0, [&](const PretrainLogRow& r) { rows.push_back(r); });
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].rot_loss > 0);
  CHECK(rows[0].loss == doctest::Approx(rows[0].vqg_loss + 0.5 * rows[0].rot_loss).epsilon(1e-6));
  CHECK(has_rotation_head(m->trainable()));
}

TEST_CASE("pretraining resumed mid-run matches an uninterrupted run") {
  const ModelConfig mc = testing::small_model_config();
  auto a = world().model(mc, 7);
  auto b = world().model(mc, 7);
  const auto ex = testing::ToyWorld::examples(*a, world().train_items);
  const SelfSupConfig cfg = quick(1.0);
  pretrain_joint(*a, ex, cfg);
  SelfSupConfig half = cfg;
  half.steps = 2;
  pretrain_joint(*b, ex, half);
  pretrain_joint(*b, ex, cfg, 2);
  CHECK(testing::same_params(a->trainable(), b->trainable()));
}

TEST_CASE("stripping removes exactly the rotation head") {
  const ModelConfig mc = testing::small_model_config();
  auto m = world().model(mc, 8);
  auto ex = testing::ToyWorld::examples(*m, world().train_items);
  pretrain_joint(*m, ex, quick(1.0));
  const ParamSet full = m->trainable();
  const ParamSet stripped = strip_rotation_head(full);
  std::set<std::string> removed;
  for (const auto& [name, t] : full) {
    if (!stripped.count(name)) removed.insert(name);
  }
  CHECK(removed == std::set<std::string>{"rotation.conv.b", "rotation.conv.w", "rotation.fc.b", "rotation.fc.w"});
  for (const auto& [name, t] : stripped) CHECK(testing::same_values(t, full.at(name)));
  CHECK_THROWS_AS(strip_rotation_head(stripped), ValidationError);

  Batch batch{&ex[0], &ex[5], &ex[9]};
  CHECK(m->loss(full, batch).item() == m->loss(stripped, batch).item());

  m->trainable() = stripped;
  const std::uint64_t ops = rotation_op_count();
  Batch sup{&ex[1], &ex[2]}, qry{&ex[3], &ex[4]};
  finetune_and_eval(*m, m->trainable(), sup, qry, 2, 0.1f);
  CHECK(rotation_op_count() == ops);
}

TEST_CASE("rotation task needs raw images") {
  ModelConfig mc = testing::small_model_config();
  mc.backend = Backend::precomputed;
  mc.feature_shape = mc.cnn.output_shape();
  auto m = world().model(mc, 1);
  std::vector<Example> ex{m->make_example(world().train[0], Tensor::zeros(mc.feature_shape))};
  CHECK_THROWS_AS(pretrain_joint(*m, ex, quick(1.0)), ValidationError);
  CHECK_NOTHROW(pretrain_joint(*m, ex, quick(0.0)));

  auto raw = world().model(testing::small_model_config(), 1);
  auto feats = testing::ToyWorld::examples(*raw, world().train_items);
  raw->precompute_features(feats);
  CHECK_THROWS_AS(pretrain_joint(*raw, feats, quick(1.0)), ValidationError);
}

TEST_CASE("selfsup config validation and json round trip") {
  SelfSupConfig c;
  c.lambda = 0.25;
  const SelfSupConfig back = SelfSupConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  SelfSupConfig bad;
  bad.lambda = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = SelfSupConfig();
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
