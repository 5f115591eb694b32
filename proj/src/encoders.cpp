// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/encoders.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "metaquill/errors.hpp"
#include "metaquill/layers.hpp"
#include "metaquill/ops.hpp"
#include "metaquill/tnsr.hpp"

namespace metaquill {

namespace {

// Flat file name for an image id; bytes outside [A-Za-z0-9._-] become %XX.
std::string feature_file_name(const std::string& image_id) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char ch : image_id) {
    if (std::isalnum(ch) || ch == '.' || ch == '_' || ch == '-') {
      out.push_back(static_cast<char>(ch));
    } else {
      out.push_back('%');
      out.push_back(kHex[ch >> 4]);
      out.push_back(kHex[ch & 15]);
    }
  }
  return out + ".tnsr";
}

}  // namespace

FeatureStore FeatureStore::open(const std::filesystem::path& dir) {
  FeatureStore store;
  store.dir_ = dir;
  const auto index_path = dir / "index.json";
  if (!std::filesystem::exists(index_path)) return store;
  std::ifstream in(index_path, std::ios::binary);
  if (!in) throw IoError("cannot read " + index_path.string());
  try {
    store.index_ = nlohmann::json::parse(in).get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed feature index " + index_path.string() + ": " + e.what());
  }
  return store;
}

void FeatureStore::put(const std::string& image_id, const Tensor& features) {
  if (features.rank() != 3) {
    throw ShapeError("feature store: feature map for '" + image_id + "' must be rank 3, got " +
                     shape_str(features.shape()));
  }
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create " + dir_.string() + ": " + ec.message());
  const std::string file = feature_file_name(image_id);
  write_tnsr(dir_ / file, features);
  index_[image_id] = file;
}

void FeatureStore::save_index() const {
  std::ofstream out(dir_ / "index.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir_ / "index.json").string());
  out << nlohmann::json(index_).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + (dir_ / "index.json").string());
}

Tensor FeatureStore::load(const std::string& image_id, const Shape& expected) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) {
    throw IoError("feature store " + dir_.string() + " has no entry for image '" + image_id + "'");
  }
  Tensor t = read_tnsr(dir_ / it->second);
  if (t.rank() != 3) {
    throw ShapeError("feature map for '" + image_id + "' must be rank 3, got " +
                     shape_str(t.shape()));
  }
  if (!expected.empty() && t.shape() != expected) {
    throw ShapeError("feature map for '" + image_id + "' has shape " + shape_str(t.shape()) +
                     ", configured " + shape_str(expected));
  }
  return t;
}

Tensor encode_image_precomputed(const std::string& image_id, const FeatureStore& store,
                                const Shape& expected) {
  return store.load(image_id, expected);
}

Shape CnnConfig::output_shape() const {
  validate();
  const std::size_t s = input_size / 8 - 2;
  return {s, s, channels};
}

void CnnConfig::validate() const {
  if (input_size % 8 != 0 || input_size < 24) {
    throw ValidationError("tiny cnn: input size must be a multiple of 8 and at least 24 (three "
                          "poolings and a valid 3x3 convolution), got " +
                          std::to_string(input_size));
  }
  for (auto w : widths) {
    if (w == 0) throw ValidationError("tiny cnn: layer widths must be positive");
  }
  if (channels == 0) throw ValidationError("tiny cnn: channel count must be positive");
}

void init_cnn(ParamSet& params, const CnnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t in[4] = {3, cfg.widths[0], cfg.widths[1], cfg.widths[2]};
  const std::size_t out[4] = {cfg.widths[0], cfg.widths[1], cfg.widths[2], cfg.channels};
  for (int l = 0; l < 4; ++l) {
    const std::string prefix = "cnn.conv" + std::to_string(l + 1);
    const float bound = std::sqrt(6.0f / static_cast<float>(in[l] * 9));
    params[prefix + ".w"] = init_uniform({out[l], in[l], 3, 3}, bound, seed, prefix + ".w");
    params[prefix + ".b"] = Tensor(Shape{out[l]}, std::vector<float>(out[l], 0.0f), true);
  }
}

namespace {

// Convolution with bias, result laid out as [H*W, C_out].
Tensor conv_rows(const Tensor& x, const Tensor& w, const Tensor& b, Padding padding) {
  const std::size_t co = w.dim(0);
  const Tensor cols = im2col(x, 1, padding);
  return add(matmul(cols, transpose(reshape(w, {co, w.numel() / co}))), b);
}

}  // namespace

Tensor encode_image_cnn(const Tensor& image, const ParamSet& params, const CnnConfig& cfg) {
  cfg.validate();
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg.input_size ||
      image.dim(2) != cfg.input_size) {
    throw ShapeError("tiny cnn: expected a [3," + std::to_string(cfg.input_size) + "," +
                     std::to_string(cfg.input_size) + "] image, got " + shape_str(image.shape()));
  }
  Tensor x = image;
  std::size_t size = cfg.input_size;
  for (int l = 1; l <= 3; ++l) {
    const std::string prefix = "cnn.conv" + std::to_string(l);
    const Tensor& w = param(params, prefix + ".w");
    const Tensor rows = conv_rows(x, w, param(params, prefix + ".b"), Padding::same);
    x = max_pool2x2(relu(reshape(transpose(rows), {w.dim(0), size, size})));
    size /= 2;
  }
  const Tensor rows =
      conv_rows(x, param(params, "cnn.conv4.w"), param(params, "cnn.conv4.b"), Padding::valid);
  return reshape(rows, cfg.output_shape());
}

void init_category_encoder(ParamSet& params, std::size_t n_categories, std::size_t d_c,
                           std::uint64_t seed) {
  if (n_categories == 0) throw ValidationError("category encoder: no categories");
  // One-hot input, so each row of l1.w is one category's first-layer response.
  params["category.l1.w"] = init_uniform({n_categories, d_c}, 1.0f, seed, "category.l1.w");
  params["category.l1.b"] = Tensor(Shape{d_c}, std::vector<float>(d_c, 0.0f), true);
  init_linear(params, "category.l2", d_c, d_c, seed);
}

Tensor encode_categories(std::span<const int> categories, const ParamSet& params) {
  const Tensor& w1 = param(params, "category.l1.w");
  for (int c : categories) {
    if (c < 0 || static_cast<std::size_t>(c) >= w1.dim(0)) {
      throw ValidationError("category id " + std::to_string(c) + " out of range for " +
                            std::to_string(w1.dim(0)) + " categories");
    }
  }
  const Tensor hidden = tanh(add(embed_lookup(w1, categories), param(params, "category.l1.b")));
  return linear(hidden, param(params, "category.l2.w"), param(params, "category.l2.b"));
}

Tensor encode_category(int category, const ParamSet& params) {
  const int ids[1] = {category};
  const Tensor out = encode_categories(ids, params);
  return reshape(out, {out.dim(1)});
}

void init_answer_encoder(ParamSet& params, std::size_t d_w, std::size_t d_a, std::uint64_t seed) {
  init_lstm(params, "answer", d_w, d_a, seed);
}

Tensor encode_answers(const std::vector<std::vector<int>>& answers, const Tensor& embedding,
                      const ParamSet& params) {
  if (answers.empty()) throw ValidationError("answer encoder: empty batch");
  std::size_t longest = 0;
  for (const auto& a : answers) {
    if (a.empty()) throw ValidationError("answer encoder: empty answer sequence");
    longest = std::max(longest, a.size());
  }
  const Tensor& wx = param(params, "answer.wx");
  const Tensor& wh = param(params, "answer.wh");
  const Tensor& b = param(params, "answer.b");
  const std::size_t batch = answers.size(), d = wh.dim(0);
  LstmState state = lstm_zero_state(batch, d);
  for (std::size_t t = 0; t < longest; ++t) {
    std::vector<int> ids(batch);
    std::vector<float> mask(batch * d, 0.0f);
    bool all_active = true;
    for (std::size_t r = 0; r < batch; ++r) {
      const bool active = t < answers[r].size();
      ids[r] = active ? answers[r][t] : 0;
      all_active &= active;
      if (active) std::fill_n(mask.begin() + r * d, d, 1.0f);
    }
    LstmState next = lstm_cell(embed_lookup(embedding, ids), state, wx, wh, b);
    if (all_active) {
      state = std::move(next);
    } else {
      // Finished rows keep their final state; the select is exact.
      std::vector<float> keep(mask.size());
      for (std::size_t k = 0; k < mask.size(); ++k) keep[k] = 1.0f - mask[k];
      const Tensor m({batch, d}, std::move(mask));
      const Tensor k({batch, d}, std::move(keep));
      state.h = add(mul(m, next.h), mul(k, state.h));
      state.c = add(mul(m, next.c), mul(k, state.c));
    }
  }
  return state.h;
}

Tensor encode_answer(std::span<const int> tokens, const Tensor& embedding, const ParamSet& params) {
  const Tensor out =
      encode_answers({std::vector<int>(tokens.begin(), tokens.end())}, embedding, params);
  return reshape(out, {out.dim(1)});
}

Tensor combine_side_info(const Tensor& category, const Tensor& answer) {
  if (!category.defined() && !answer.defined()) {
    throw ValidationError("side information required but neither category nor answer given");
  }
  if (!category.defined()) return answer;
  if (!answer.defined()) return category;
  return concat({category, answer}, category.rank() - 1);
}

}  // namespace metaquill
