// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Episodic K-way N-shot sampling and the bi-level optimiser: plain gradient
// descent inner steps per task, outer step on the summed query losses
// differentiated through the inner steps (or not, in first-order mode).

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaquill/dataset.hpp"
#include "metaquill/metrics.hpp"
#include "metaquill/model.hpp"
#include "metaquill/params.hpp"

namespace metaquill {

struct MetaConfig {
  float inner_lr = 0.1f;
  float outer_lr = 0.05f;
  int adaptation_steps = 3;
  int meta_batch = 4;
  bool first_order = false;
  int ways = 3;
  int shots = 10;
  int queries = 5;
  std::uint64_t seed = 0;
  int max_meta_iters = 200;
  // Joint L2 norm cap on the outer gradient; <= 0 disables clipping.
  double clip_norm = 10.0;
  int threads = 1;
  int finetune_steps = 10;

  void validate() const;
  nlohmann::json to_json() const;
  static MetaConfig from_json(const nlohmann::json& j);
};

struct Episode {
  std::uint64_t task_id = 0;
  std::vector<std::string> categories;
  // Indices into the record list the episode was drawn from.
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
};

// Draws K categories uniformly without replacement among those with at
// least N + Q distinct images, then N support and Q query records per
// category from distinct images. No image appears twice in an episode.
Episode sample_episode(const std::vector<Record>& records, CategorySource source,
                       const MetaConfig& cfg, std::mt19937_64& rng);

// Generator for episode `index` of meta-iteration `iter`; independent of how
// many draws earlier iterations made, so training can resume mid-run.
std::mt19937_64 iteration_rng(std::uint64_t seed, std::int64_t iter, std::uint64_t stream);

using LossFn = std::function<Tensor(const ParamSet&)>;

struct Task {
  LossFn support;
  LossFn query;
};

// `steps` gradient steps on the support loss. Full mode keeps every update
// differentiable with respect to `psi`; first-order mode restarts from
// detached copies so the result is a fresh set of leaves.
ParamSet inner_adapt(const ParamSet& psi, const LossFn& support, int steps, float lr,
                     bool first_order);

struct MetaGradient {
  std::map<std::string, Tensor> grads;
  std::vector<double> query_losses;  // one per task, at the adapted parameters
};

// Gradient of the sum over tasks of the query loss at the adapted
// parameters. Tasks are independent and may run on cfg.threads workers;
// the sum is always formed in task order.
MetaGradient meta_gradient(const ParamSet& psi, const std::vector<Task>& tasks,
                           const MetaConfig& cfg);

struct MetaLogRow {
  std::int64_t iter = 0;
  double mean_query_loss = 0;
  double wallclock_ms = 0;
};

// Examples aligned with records. Runs iterations [start_iter,
// cfg.max_meta_iters), updating model.trainable() in place.
void meta_train(Model& model, const std::vector<Record>& records,
                const std::vector<Example>& examples, CategorySource source,
                const MetaConfig& cfg, std::int64_t start_iter,
                const std::function<void(const MetaLogRow&)>& on_iter = {});

// Builds the support/query task for one episode.
Task make_task(const Model& model, const std::vector<Example>& examples, const Episode& episode);

// Mean query loss after adaptation over a fixed list of episodes.
double evaluate_query_loss(const Model& model, const ParamSet& psi,
                           const std::vector<Example>& examples,
                           const std::vector<Episode>& episodes, const MetaConfig& cfg);

struct FinetuneResult {
  Scores scores;
  Corpus corpus;
};

// Adapts `psi` on the support examples for `steps` full-batch gradient steps
// at rate `lr`, decodes the queries greedily and scores them against their
// reference questions.
FinetuneResult finetune_and_eval(const Model& model, const ParamSet& psi,
                                 const std::vector<const Example*>& support,
                                 const std::vector<const Example*>& query, int steps, float lr,
                                 const MetricOptions& metrics = {});

}  // namespace metaquill
