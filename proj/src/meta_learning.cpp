// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/meta_learning.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <thread>

#include "metaquill/autograd.hpp"
#include "metaquill/errors.hpp"
#include "metaquill/ops.hpp"

namespace metaquill {

using nlohmann::json;

void MetaConfig::validate() const {
  if (!(inner_lr > 0) || !(outer_lr > 0)) {
    throw ValidationError("meta: inner_lr and outer_lr must be positive");
  }
  if (adaptation_steps < 0) throw ValidationError("meta: adaptation_steps must be >= 0");
  if (meta_batch < 1 || ways < 1 || shots < 1 || queries < 1) {
    throw ValidationError("meta: meta_batch, ways, shots and queries must be >= 1");
  }
  if (max_meta_iters < 0) throw ValidationError("meta: max_meta_iters must be >= 0");
  if (threads < 1) throw ValidationError("meta: threads must be >= 1");
  if (finetune_steps < 0) throw ValidationError("meta: finetune_steps must be >= 0");
}

json MetaConfig::to_json() const {
  return {{"inner_lr", json_float(inner_lr)},
          {"outer_lr", json_float(outer_lr)},
          {"adaptation_steps", adaptation_steps},
          {"meta_batch", meta_batch},
          {"first_order", first_order},
          {"ways", ways},
          {"shots", shots},
          {"queries", queries},
          {"seed", seed},
          {"max_meta_iters", max_meta_iters},
          {"clip_norm", clip_norm},
          {"threads", threads},
          {"finetune_steps", finetune_steps}};
}

MetaConfig MetaConfig::from_json(const json& j) {
  MetaConfig c;
  try {
    c.inner_lr = j.at("inner_lr").get<float>();
    c.outer_lr = j.at("outer_lr").get<float>();
    c.adaptation_steps = j.at("adaptation_steps").get<int>();
    c.meta_batch = j.at("meta_batch").get<int>();
    c.first_order = j.at("first_order").get<bool>();
    c.ways = j.at("ways").get<int>();
    c.shots = j.at("shots").get<int>();
    c.queries = j.at("queries").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.max_meta_iters = j.at("max_meta_iters").get<int>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.threads = j.at("threads").get<int>();
    c.finetune_steps = j.at("finetune_steps").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("meta config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

// Partial Fisher-Yates: the first k entries become a uniform sample without
// replacement.
template <typename T>
void choose(std::vector<T>& items, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
}

}  // namespace

Episode sample_episode(const std::vector<Record>& records, CategorySource source,
                       const MetaConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  // category -> image id -> record indices, in first-seen order.
  std::map<std::string, std::vector<std::pair<std::string, std::vector<std::size_t>>>> groups;
  std::map<std::string, std::map<std::string, std::size_t>> slot;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& cat = category_of(records[i], source);
    auto& images = groups[cat];
    auto [it, inserted] = slot[cat].emplace(records[i].image_id, images.size());
    if (inserted) images.emplace_back(records[i].image_id, std::vector<std::size_t>{});
    images[it->second].second.push_back(i);
  }
  const std::size_t k = static_cast<std::size_t>(cfg.ways);
  const std::size_t need = static_cast<std::size_t>(cfg.shots + cfg.queries);
  if (groups.size() < k) {
    throw ValidationError("episode: " + std::to_string(cfg.ways) + "-way sampling needs " +
                          std::to_string(cfg.ways) + " categories, the split has " +
                          std::to_string(groups.size()));
  }
  std::vector<std::string> eligible;
  std::string smallest;
  std::size_t smallest_n = static_cast<std::size_t>(-1);
  for (const auto& [cat, images] : groups) {
    if (images.size() >= need) eligible.push_back(cat);
    if (images.size() < smallest_n) {
      smallest_n = images.size();
      smallest = cat;
    }
  }
  if (eligible.size() < k) {
    throw ValidationError("episode: category '" + smallest + "' is too small (" +
                          std::to_string(smallest_n) + " images; shots + queries = " +
                          std::to_string(need) + ") and fewer than " + std::to_string(k) +
                          " categories are large enough");
  }
  choose(eligible, k, rng);

  Episode ep;
  std::set<std::string> used;
  for (std::size_t c = 0; c < k; ++c) {
    const auto& cat = eligible[c];
    ep.categories.push_back(cat);
    std::vector<std::size_t> candidates;
    const auto& images = groups.at(cat);
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (!used.count(images[i].first)) candidates.push_back(i);
    }
    if (candidates.size() < need) {
      throw ValidationError("episode: category '" + cat + "' has only " +
                            std::to_string(candidates.size()) +
                            " images not already used by this episode");
    }
    choose(candidates, need, rng);
    for (std::size_t j = 0; j < need; ++j) {
      const auto& [image_id, recs] = images[candidates[j]];
      used.insert(image_id);
      std::uniform_int_distribution<std::size_t> pick(0, recs.size() - 1);
      const std::size_t r = recs[pick(rng)];
      (j < static_cast<std::size_t>(cfg.shots) ? ep.support : ep.query).push_back(r);
    }
  }
  ep.task_id = rng();
  return ep;
}

std::mt19937_64 iteration_rng(std::uint64_t seed, std::int64_t iter, std::uint64_t stream) {
  const auto it = static_cast<std::uint64_t>(iter);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(it), static_cast<std::uint32_t>(it >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

ParamSet inner_adapt(const ParamSet& psi, const LossFn& support, int steps, float lr,
                     bool first_order) {
  ParamSet cur = first_order ? clone_params(psi) : psi;
  for (int s = 0; s < steps; ++s) {
    try {
      const Tensor loss = support(cur);
      const std::vector<Tensor> vals = values(cur);
      const std::vector<Tensor> grads = grad(loss, vals, /*create_graph=*/!first_order);
      std::size_t k = 0;
      if (first_order) {
        std::map<std::string, Tensor> named;
        for (const auto& [name, p] : cur) named.emplace(name, grads[k++]);
        cur = sgd_step(cur, named, lr);
      } else {
        for (auto& [name, p] : cur) {
          p = sub(p, scale(grads[k++], lr));
        }
      }
    } catch (const NumericError& e) {
      throw NumericError("inner adaptation step " + std::to_string(s + 1) + " of " +
                         std::to_string(steps) + " aborted the episode: " + e.what());
    }
  }
  return cur;
}

MetaGradient meta_gradient(const ParamSet& psi, const std::vector<Task>& tasks,
                           const MetaConfig& cfg) {
  if (tasks.empty()) throw ValidationError("meta_gradient: no episodes");
  struct PerTask {
    std::vector<Tensor> grads;
    double loss = 0;
  };
  std::vector<PerTask> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  const std::vector<Tensor> psi_values = values(psi);

  auto run = [&](std::size_t i) {
    try {
      const ParamSet adapted =
          inner_adapt(psi, tasks[i].support, cfg.adaptation_steps, cfg.inner_lr, cfg.first_order);
      const Tensor q = tasks[i].query(adapted);
      const std::vector<Tensor> wrt = cfg.first_order ? values(adapted) : psi_values;
      results[i].grads = grad(q, wrt);
      results[i].loss = q.item();
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(1, cfg.threads)), tasks.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < tasks.size(); i += workers) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  MetaGradient out;
  std::size_t k = 0;
  for (const auto& [name, p] : psi) {
    std::vector<double> acc(p.numel(), 0.0);
    for (const auto& r : results) {
      const auto g = r.grads[k].data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
    }
    out.grads.emplace(name, Tensor(p.shape(), std::vector<float>(acc.begin(), acc.end())));
    ++k;
  }
  for (const auto& r : results) out.query_losses.push_back(r.loss);
  return out;
}

Task make_task(const Model& model, const std::vector<Example>& examples, const Episode& episode) {
  Batch support, query;
  for (auto i : episode.support) support.push_back(&examples.at(i));
  for (auto i : episode.query) query.push_back(&examples.at(i));
  return {[&model, support](const ParamSet& p) { return model.loss(p, support); },
          [&model, query](const ParamSet& p) { return model.loss(p, query); }};
}

void meta_train(Model& model, const std::vector<Record>& records,
                const std::vector<Example>& examples, CategorySource source,
                const MetaConfig& cfg, std::int64_t start_iter,
                const std::function<void(const MetaLogRow&)>& on_iter) {
  cfg.validate();
  if (records.size() != examples.size()) {
    throw ValidationError("meta_train: records and examples are not aligned");
  }
  for (std::int64_t iter = start_iter; iter < cfg.max_meta_iters; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Task> tasks;
    for (int m = 0; m < cfg.meta_batch; ++m) {
      auto rng = iteration_rng(cfg.seed, iter, static_cast<std::uint64_t>(m));
      tasks.push_back(make_task(model, examples, sample_episode(records, source, cfg, rng)));
    }
    MetaGradient mg = meta_gradient(model.trainable(), tasks, cfg);
    if (cfg.clip_norm > 0) clip_grad_norm(mg.grads, cfg.clip_norm);
    model.trainable() = sgd_step(model.trainable(), mg.grads, cfg.outer_lr);
    double mean_loss = 0;
    for (double l : mg.query_losses) mean_loss += l;
    mean_loss /= static_cast<double>(mg.query_losses.size());
    const auto t1 = std::chrono::steady_clock::now();
    if (on_iter) {
      on_iter({iter, mean_loss, std::chrono::duration<double, std::milli>(t1 - t0).count()});
    }
  }
}

double evaluate_query_loss(const Model& model, const ParamSet& psi,
                           const std::vector<Example>& examples,
                           const std::vector<Episode>& episodes, const MetaConfig& cfg) {
  if (episodes.empty()) throw ValidationError("evaluate_query_loss: no episodes");
  double total = 0;
  for (const auto& ep : episodes) {
    const Task task = make_task(model, examples, ep);
    const ParamSet adapted =
        inner_adapt(psi, task.support, cfg.adaptation_steps, cfg.inner_lr, /*first_order=*/true);
    NoGradGuard no_grad;
    total += task.query(adapted).item();
  }
  return total / static_cast<double>(episodes.size());
}

FinetuneResult finetune_and_eval(const Model& model, const ParamSet& psi,
                                 const std::vector<const Example*>& support,
                                 const std::vector<const Example*>& query, int steps, float lr,
                                 const MetricOptions& metrics) {
  if (query.empty()) throw ValidationError("finetune_and_eval: empty query set");
  if (steps > 0 && support.empty()) throw ValidationError("finetune_and_eval: empty support set");
  const Batch support_batch(support.begin(), support.end());
  const ParamSet adapted = inner_adapt(
      psi, [&](const ParamSet& p) { return model.loss(p, support_batch); }, steps, lr,
      /*first_order=*/true);
  const Batch query_batch(query.begin(), query.end());
  const auto generated = model.generate(adapted, query_batch);
  FinetuneResult result;
  for (std::size_t i = 0; i < query.size(); ++i) {
    ScoredItem item;
    item.id = query[i]->image_id;
    item.candidate = model.vocab().decode(generated[i]);
    // An empty generation scores zero everywhere but still counts towards
    // the candidate length.
    if (item.candidate.empty()) item.candidate.push_back("<empty>");
    item.references.push_back(query[i]->reference);
    result.corpus.push_back(std::move(item));
  }
  result.scores = score_corpus(result.corpus, metrics);
  return result;
}

}  // namespace metaquill
