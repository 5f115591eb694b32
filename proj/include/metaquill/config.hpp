// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document covering every training and
// evaluation knob. User documents are merged over the defaults; unknown keys
// and type mismatches are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaquill/dataset.hpp"
#include "metaquill/meta_learning.hpp"
#include "metaquill/metrics.hpp"
#include "metaquill/model.hpp"
#include "metaquill/selfsup.hpp"

namespace metaquill {

struct DataConfig {
  std::string manifest;
  std::string split;
  // Directory image_ref paths are relative to; empty means the manifest's
  // own directory.
  std::string image_root;
  // Feature store directory for the precomputed backend.
  std::string features;
  CategorySource category_source = CategorySource::answer;
  // Optional [V, d_w] TNSR table for the pretrained embedding source.
  std::string embedding_table;
};

struct ScheduleConfig {
  // Freeze the tiny CNN and precompute features before meta-training and
  // fine-tuning.
  bool freeze_encoder = true;
  int checkpoint_every = 50;
  int eval_episodes = 5;
};

struct OutputConfig {
  std::string dir = "run";
  // Checkpoint to start from; empty means fresh parameters.
  std::string init_checkpoint;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  DataConfig data;
  ModelConfig model;
  MetaConfig meta;
  SelfSupConfig selfsup;
  MetricOptions metrics;
  ScheduleConfig schedule;
  OutputConfig output;

  // Every key with its value; round-trips through from_json.
  nlohmann::json to_json() const;
  static nlohmann::json defaults();
  // Merges `user` over the defaults and validates the result.
  static RunConfig from_json(const nlohmann::json& user);
  static RunConfig load(const std::filesystem::path& path);
};

// Recursive merge of `user` into `base`. Keys absent from `base` and values
// whose JSON type differs from the default's raise ValidationError naming
// the dotted key path.
nlohmann::json merge_config(const nlohmann::json& base, const nlohmann::json& user,
                            const std::string& path = "");

// Applies "a.b.c=value" overrides; the value is parsed as JSON and taken as
// a plain string when that fails.
nlohmann::json apply_overrides(const nlohmann::json& doc, const std::vector<std::string>& sets);

}  // namespace metaquill
