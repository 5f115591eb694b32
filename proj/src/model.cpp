// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/model.hpp"

#include <algorithm>
#include <fstream>

#include "metaquill/errors.hpp"
#include "metaquill/ops.hpp"

namespace metaquill {

using nlohmann::json;

std::string to_string(ConditioningMode m) {
  return m == ConditioningMode::scale_shift ? "scale_shift" : "no_scale_shift";
}
std::string to_string(SideInfo s) {
  switch (s) {
    case SideInfo::none: return "none";
    case SideInfo::category: return "category";
    case SideInfo::answer: return "answer";
    default: return "both";
  }
}
std::string to_string(Backend b) { return b == Backend::precomputed ? "precomputed" : "tiny_cnn"; }
std::string to_string(EmbeddingSource e) {
  return e == EmbeddingSource::scratch ? "scratch" : "pretrained";
}

ConditioningMode parse_conditioning(const std::string& s) {
  if (s == "scale_shift") return ConditioningMode::scale_shift;
  if (s == "no_scale_shift") return ConditioningMode::no_scale_shift;
  throw ValidationError("model.mode must be scale_shift or no_scale_shift, got '" + s + "'");
}
SideInfo parse_side_info(const std::string& s) {
  if (s == "none") return SideInfo::none;
  if (s == "category") return SideInfo::category;
  if (s == "answer") return SideInfo::answer;
  if (s == "both") return SideInfo::both;
  throw ValidationError("model.side_info must be none, category, answer or both, got '" + s + "'");
}
Backend parse_backend(const std::string& s) {
  if (s == "precomputed") return Backend::precomputed;
  if (s == "tiny_cnn") return Backend::tiny_cnn;
  throw ValidationError("model.backend must be precomputed or tiny_cnn, got '" + s + "'");
}
EmbeddingSource parse_embedding_source(const std::string& s) {
  if (s == "scratch") return EmbeddingSource::scratch;
  if (s == "pretrained") return EmbeddingSource::pretrained;
  throw ValidationError("model.embedding must be scratch or pretrained, got '" + s + "'");
}

std::size_t ModelConfig::side_width() const {
  return (uses_category() ? d_c : 0) + (uses_answer() ? d_a : 0);
}

Shape ModelConfig::features_shape() const {
  return backend == Backend::tiny_cnn ? cnn.output_shape() : feature_shape;
}

void ModelConfig::validate() const {
  for (auto [name, v] : {std::pair{"d_w", d_w}, {"d_h", d_h}, {"d_att", d_att}, {"d_p", d_p},
                         {"d_c", d_c}, {"d_a", d_a}, {"film_hidden", film_hidden},
                         {"max_len", max_len}, {"max_answer_len", max_answer_len}}) {
    if (v == 0) throw ValidationError(std::string("model.") + name + " must be positive");
  }
  if (mode == ConditioningMode::scale_shift && side_info == SideInfo::none) {
    throw ValidationError("model: scale_shift conditioning needs side information "
                          "(side_info none is only valid with no_scale_shift)");
  }
  if (backend == Backend::tiny_cnn) cnn.validate();
  if (backend == Backend::precomputed) {
    if (feature_shape.size() != 3 || numel(feature_shape) == 0) {
      throw ValidationError("model.feature_shape must be [h,w,c] with positive extents");
    }
  }
}

json ModelConfig::to_json() const {
  return {{"mode", to_string(mode)},
          {"side_info", to_string(side_info)},
          {"backend", to_string(backend)},
          {"embedding", to_string(embedding)},
          {"d_w", d_w},
          {"d_h", d_h},
          {"d_att", d_att},
          {"d_p", d_p},
          {"d_c", d_c},
          {"d_a", d_a},
          {"film_hidden", film_hidden},
          {"cnn_widths", cnn.widths},
          {"channels", cnn.channels},
          {"image_size", cnn.input_size},
          {"feature_shape", feature_shape},
          {"max_len", max_len},
          {"max_answer_len", max_answer_len}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.mode = parse_conditioning(j.at("mode").get<std::string>());
    c.side_info = parse_side_info(j.at("side_info").get<std::string>());
    c.backend = parse_backend(j.at("backend").get<std::string>());
    c.embedding = parse_embedding_source(j.at("embedding").get<std::string>());
    c.d_w = j.at("d_w").get<std::size_t>();
    c.d_h = j.at("d_h").get<std::size_t>();
    c.d_att = j.at("d_att").get<std::size_t>();
    c.d_p = j.at("d_p").get<std::size_t>();
    c.d_c = j.at("d_c").get<std::size_t>();
    c.d_a = j.at("d_a").get<std::size_t>();
    c.film_hidden = j.at("film_hidden").get<std::size_t>();
    c.cnn.widths = j.at("cnn_widths").get<std::array<std::size_t, 3>>();
    c.cnn.channels = j.at("channels").get<std::size_t>();
    c.cnn.input_size = j.at("image_size").get<std::size_t>();
    c.feature_shape = j.at("feature_shape").get<Shape>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.max_answer_len = j.at("max_answer_len").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Model::Model(ModelConfig config, Vocabulary vocab, std::vector<std::string> categories,
             std::uint64_t seed, const Tensor& embedding_table)
    : config_(std::move(config)),
      vocab_(std::move(vocab)),
      categories_(std::move(categories)),
      seed_(seed) {
  config_.validate();
  if (config_.embedding == EmbeddingSource::pretrained) {
    if (!embedding_table.defined() || embedding_table.rank() != 2 ||
        embedding_table.dim(0) != vocab_.size() || embedding_table.dim(1) != config_.d_w) {
      throw ShapeError("pretrained embedding table must be [" + std::to_string(vocab_.size()) +
                       "," + std::to_string(config_.d_w) + "], got " +
                       (embedding_table.defined() ? shape_str(embedding_table.shape())
                                                  : std::string("nothing")));
    }
    frozen_["embed.E"] = embedding_table.as_leaf(false);
  } else {
    trainable_["embed.E"] = init_uniform({vocab_.size(), config_.d_w}, 0.5f, seed, "embed.E");
  }
  if (config_.backend == Backend::tiny_cnn) init_cnn(trainable_, config_.cnn, seed);
  if (config_.uses_category()) {
    init_category_encoder(trainable_, categories_.size(), config_.d_c, seed);
  }
  if (config_.uses_answer()) init_answer_encoder(trainable_, config_.d_w, config_.d_a, seed);
  const Shape fs = config_.features_shape();
  if (config_.mode == ConditioningMode::scale_shift) {
    init_film(trainable_, config_.side_width(), config_.film_hidden, fs[2], seed);
  }
  DecoderDims dims;
  dims.channels = fs[2];
  dims.d_w = config_.d_w;
  dims.d_h = config_.d_h;
  dims.d_att = config_.d_att;
  dims.d_p = config_.d_p;
  dims.vocab = vocab_.size();
  dims.side = config_.mode == ConditioningMode::no_scale_shift ? config_.side_width() : 0;
  init_decoder(trainable_, dims, seed);
}

void Model::freeze(const std::string& prefix) {
  for (auto it = trainable_.begin(); it != trainable_.end();) {
    if (it->first.rfind(prefix, 0) == 0) {
      frozen_[it->first] = it->second.as_leaf(false);
      it = trainable_.erase(it);
    } else {
      ++it;
    }
  }
}

void Model::unfreeze(const std::string& prefix) {
  for (auto it = frozen_.begin(); it != frozen_.end();) {
    if (it->first.rfind(prefix, 0) == 0) {
      trainable_[it->first] = it->second.as_leaf(true);
      it = frozen_.erase(it);
    } else {
      ++it;
    }
  }
}

ParamSet Model::merged(const ParamSet& trainable) const {
  ParamSet all = frozen_;
  for (const auto& [name, t] : trainable) all[name] = t;
  return all;
}

int Model::category_id(const std::string& name) const {
  auto it = std::find(categories_.begin(), categories_.end(), name);
  if (it == categories_.end()) throw ValidationError("unknown category '" + name + "'");
  return static_cast<int>(it - categories_.begin());
}

Example Model::make_example(const Record& r, Tensor image_or_features) const {
  Example ex;
  ex.image_id = r.image_id;
  if (image_or_features.defined()) {
    if (image_or_features.shape() == config_.features_shape()) {
      ex.features = image_or_features.detach();
    } else {
      ex.image = image_or_features.detach();
    }
  }
  if (config_.uses_category()) ex.category = category_id(r.answer_category);
  ex.answer = vocab_.encode(r.answer);
  if (ex.answer.size() > config_.max_answer_len) ex.answer.resize(config_.max_answer_len);
  if (config_.uses_answer() && ex.answer.empty()) {
    throw ValidationError("record for image '" + r.image_id + "' has an empty answer");
  }
  auto words = vocab_.encode(r.question);
  if (words.size() + 1 > config_.max_len) words.resize(config_.max_len - 1);
  ex.question.push_back(Vocabulary::kBos);
  ex.question.insert(ex.question.end(), words.begin(), words.end());
  ex.question.push_back(Vocabulary::kEos);
  ex.reference = tokenize(r.question);
  return ex;
}

void Model::precompute_features(std::vector<Example>& examples) const {
  NoGradGuard no_grad;
  const ParamSet params = merged(trainable_);
  for (auto& ex : examples) {
    if (ex.features.defined()) continue;
    ex.features = encode_image_cnn(ex.image, params, config_.cnn);
    ex.image = Tensor();
  }
}

Tensor Model::features(const ParamSet& params, const Batch& batch) const {
  if (batch.empty()) throw ValidationError("model: empty batch");
  const Shape fs = config_.features_shape();
  const std::size_t positions = fs[0] * fs[1];
  std::vector<Tensor> maps;
  maps.reserve(batch.size());
  for (const Example* ex : batch) {
    Tensor f;
    if (ex->features.defined()) {
      f = ex->features;
    } else if (ex->image.defined()) {
      if (config_.backend != Backend::tiny_cnn) {
        throw ValidationError("image '" + ex->image_id +
                              "' has no precomputed features and the backend is precomputed");
      }
      f = encode_image_cnn(ex->image, params, config_.cnn);
    } else {
      throw ValidationError("image '" + ex->image_id + "' has neither pixels nor features");
    }
    if (f.shape() != fs) {
      throw ShapeError("feature map for '" + ex->image_id + "' is " + shape_str(f.shape()) +
                       ", configured " + shape_str(fs));
    }
    maps.push_back(reshape(f, {positions, fs[2]}));
  }
  return stack(maps);
}

Tensor Model::side_embedding(const ParamSet& params, const Batch& batch) const {
  Tensor cat, ans;
  if (config_.uses_category()) {
    std::vector<int> ids;
    for (const Example* ex : batch) ids.push_back(ex->category);
    cat = encode_categories(ids, params);
  }
  if (config_.uses_answer()) {
    std::vector<std::vector<int>> answers;
    for (const Example* ex : batch) answers.push_back(ex->answer);
    ans = encode_answers(answers, param(params, "embed.E"), params);
  }
  if (!cat.defined() && !ans.defined()) return Tensor();
  return combine_side_info(cat, ans);
}

Tensor Model::conditioned(const ParamSet& params, const Batch&, const Tensor& features,
                          const Tensor& side) const {
  if (config_.mode == ConditioningMode::no_scale_shift) return features;
  return apply_film(features, compute_gamma_beta(side, params));
}

Tensor Model::loss(const ParamSet& trainable, const Batch& batch) const {
  const ParamSet params = merged(trainable);
  const Tensor f = features(params, batch);
  const Tensor s = side_embedding(params, batch);
  const Tensor g = conditioned(params, batch, f, s);
  const Tensor dec_side = config_.mode == ConditioningMode::no_scale_shift ? s : Tensor();
  std::vector<std::vector<int>> gold;
  gold.reserve(batch.size());
  for (const Example* ex : batch) gold.push_back(ex->question);
  return teacher_forced_loss(g, dec_side, gold, param(params, "embed.E"), params, config_.max_len);
}

std::vector<std::vector<int>> Model::generate(const ParamSet& trainable, const Batch& batch) const {
  NoGradGuard no_grad;
  const ParamSet params = merged(trainable);
  const Tensor f = features(params, batch);
  const Tensor s = side_embedding(params, batch);
  const Tensor g = conditioned(params, batch, f, s);
  const Tensor dec_side = config_.mode == ConditioningMode::no_scale_shift ? s : Tensor();
  return decode_greedy(g, dec_side, param(params, "embed.E"), params, config_.max_len);
}

Batch as_batch(const std::vector<Example>& examples) {
  Batch b;
  b.reserve(examples.size());
  for (const auto& ex : examples) b.push_back(&ex);
  return b;
}

void save_model(const std::filesystem::path& dir, const Model& model, std::int64_t step,
                const json& extra) {
  Checkpoint ckpt;
  ckpt.params = model.merged(model.trainable());
  for (const auto& [name, t] : model.frozen()) ckpt.frozen.push_back(name);
  ckpt.step = step;
  ckpt.seed = model.seed();
  ckpt.config = {{"model", model.config().to_json()}, {"run", extra}};
  save_checkpoint(dir, ckpt);
  model.vocab().save(dir / "vocab.txt");
  std::ofstream out(dir / "categories.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "categories.json").string());
  out << json(model.categories()).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + (dir / "categories.json").string());
}

LoadedModel load_model(const std::filesystem::path& dir) {
  Checkpoint ckpt = load_checkpoint(dir);
  if (!ckpt.config.contains("model")) {
    throw ValidationError("checkpoint " + dir.string() + " carries no model config");
  }
  const ModelConfig config = ModelConfig::from_json(ckpt.config.at("model"));
  Vocabulary vocab = Vocabulary::load(dir / "vocab.txt");
  std::ifstream in(dir / "categories.json", std::ios::binary);
  if (!in) throw IoError("cannot read " + (dir / "categories.json").string());
  std::vector<std::string> categories;
  try {
    categories = json::parse(in).get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError("malformed categories.json: " + std::string(e.what()));
  }
  Tensor table;
  if (auto it = ckpt.params.find("embed.E"); it != ckpt.params.end()) table = it->second;
  Model model(config, std::move(vocab), std::move(categories), ckpt.seed, table);
  // Replace fresh parameters with the stored ones, keeping the stored split
  // between trainable and frozen.
  model.trainable().clear();
  for (const auto& [name, t] : ckpt.params) model.trainable()[name] = t;
  for (const auto& name : ckpt.frozen) model.freeze(name);
  return {std::move(model), ckpt.step, ckpt.config.value("run", json::object())};
}

}  // namespace metaquill
