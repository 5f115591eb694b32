// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/config.hpp"

#include <fstream>

#include "metaquill/errors.hpp"

namespace metaquill {

using nlohmann::json;

namespace {

const char* type_name(const json& j) {
  if (j.is_number()) return "number";
  return j.type_name();
}

bool compatible(const json& def, const json& value) {
  if (def.is_number()) {
    if (!value.is_number()) return false;
    // Integer knobs stay integers.
    if (def.is_number_integer()) return value.is_number_integer();
    return true;
  }
  return def.type() == value.type();
}

std::string join_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

}  // namespace

json merge_config(const json& base, const json& user, const std::string& path) {
  if (!user.is_object()) {
    throw ValidationError("config" + (path.empty() ? std::string() : " '" + path + "'") +
                          ": expected an object, got " + type_name(user));
  }
  json out = base;
  for (const auto& [key, value] : user.items()) {
    const std::string here = join_path(path, key);
    if (!base.contains(key)) throw ValidationError("config: unknown key '" + here + "'");
    const json& def = base.at(key);
    if (def.is_object()) {
      out[key] = merge_config(def, value, here);
    } else if (!compatible(def, value)) {
      throw ValidationError("config: '" + here + "' must be a " + type_name(def) + ", got " +
                            type_name(value));
    } else {
      out[key] = value;
    }
  }
  return out;
}

json apply_overrides(const json& doc, const std::vector<std::string>& sets) {
  json user = doc;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("config override '" + s + "' is not of the form key.path=value");
    }
    const std::string key = s.substr(0, eq);
    const std::string raw = s.substr(eq + 1);
    json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;
    json* node = &user;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (part.empty()) throw ValidationError("config override '" + s + "' has an empty key");
      if (!node->is_object()) *node = json::object();
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  return user;
}

json RunConfig::to_json() const {
  json meta_j = meta.to_json();
  meta_j.erase("seed");
  meta_j.erase("threads");
  json selfsup_j = selfsup.to_json();
  selfsup_j.erase("seed");
  return {{"seed", seed},
          {"threads", threads},
          {"data",
           {{"manifest", data.manifest},
            {"split", data.split},
            {"image_root", data.image_root},
            {"features", data.features},
            {"category_source",
             data.category_source == CategorySource::answer ? "answer" : "question"},
            {"embedding_table", data.embedding_table}}},
          {"model", model.to_json()},
          {"meta", meta_j},
          {"selfsup", selfsup_j},
          {"metrics", metrics.to_json()},
          {"schedule",
           {{"freeze_encoder", schedule.freeze_encoder},
            {"checkpoint_every", schedule.checkpoint_every},
            {"eval_episodes", schedule.eval_episodes}}},
          {"output", {{"dir", output.dir}, {"init_checkpoint", output.init_checkpoint}}}};
}

json RunConfig::defaults() { return RunConfig{}.to_json(); }

RunConfig RunConfig::from_json(const json& user) {
  const json j = merge_config(defaults(), user);
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<int>();
    const json& d = j.at("data");
    c.data.manifest = d.at("manifest").get<std::string>();
    c.data.split = d.at("split").get<std::string>();
    c.data.image_root = d.at("image_root").get<std::string>();
    c.data.features = d.at("features").get<std::string>();
    c.data.category_source = parse_category_source(d.at("category_source").get<std::string>());
    c.data.embedding_table = d.at("embedding_table").get<std::string>();
    c.model = ModelConfig::from_json(j.at("model"));
    json meta_j = j.at("meta");
    meta_j["seed"] = c.seed;
    meta_j["threads"] = c.threads;
    c.meta = MetaConfig::from_json(meta_j);
    json selfsup_j = j.at("selfsup");
    selfsup_j["seed"] = c.seed;
    c.selfsup = SelfSupConfig::from_json(selfsup_j);
    c.metrics = MetricOptions::from_json(j.at("metrics"));
    const json& s = j.at("schedule");
    c.schedule.freeze_encoder = s.at("freeze_encoder").get<bool>();
    c.schedule.checkpoint_every = s.at("checkpoint_every").get<int>();
    c.schedule.eval_episodes = s.at("eval_episodes").get<int>();
    c.output.dir = j.at("output").at("dir").get<std::string>();
    c.output.init_checkpoint = j.at("output").at("init_checkpoint").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (c.threads < 1) throw ValidationError("config: threads must be >= 1");
  if (c.schedule.checkpoint_every < 1) {
    throw ValidationError("config: schedule.checkpoint_every must be >= 1");
  }
  if (c.schedule.eval_episodes < 1) throw ValidationError("config: schedule.eval_episodes must be >= 1");
  if (c.output.dir.empty()) throw ValidationError("config: output.dir must not be empty");
  c.model.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ValidationError("config " + path.string() + " is not valid JSON");
  return from_json(j);
}

}  // namespace metaquill
