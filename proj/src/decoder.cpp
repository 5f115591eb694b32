// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/decoder.hpp"

#include <cmath>

#include "metaquill/errors.hpp"
#include "metaquill/ops.hpp"
#include "metaquill/text.hpp"

namespace metaquill {

void init_decoder(ParamSet& params, const DecoderDims& d, std::uint64_t seed) {
  auto weight = [&](const std::string& name, std::size_t in, std::size_t out) {
    params[name] = init_uniform({in, out}, 1.0f / std::sqrt(static_cast<float>(in)), seed, name);
  };
  auto zeros = [&](const std::string& name, Shape shape) {
    params[name] = Tensor(shape, std::vector<float>(numel(shape), 0.0f), true);
  };
  weight("att.w_h", d.d_h, d.d_att);
  weight("att.u", d.channels, d.d_att);
  zeros("att.b_h", {d.d_att});
  weight("att.theta", d.d_att, 1);
  zeros("att.b", {});
  init_lstm(params, "dec.lstm", d.channels + d.d_w + d.side, d.d_h, seed);
  weight("out.w_p", d.d_h + d.channels + d.d_w + d.side, d.d_p);
  zeros("out.b_p", {d.d_p});
  weight("out.theta", d.d_p, d.vocab);
  zeros("out.d", {d.vocab});
}

namespace {

Tensor as_positions(const Tensor& features) {
  if (features.rank() == 3) return features;
  if (features.rank() == 4) {
    return reshape(features, {features.dim(0), features.dim(1) * features.dim(2), features.dim(3)});
  }
  throw ShapeError("decoder: features must be [B,P,c] or [B,h,w,c], got " +
                   shape_str(features.shape()));
}

Tensor with_side(std::initializer_list<Tensor> parts, const Tensor& side) {
  std::vector<Tensor> all(parts);
  if (side.defined()) all.push_back(side);
  return concat(std::span<const Tensor>(all), 1);
}

}  // namespace

Tensor attention_keys(const Tensor& features, const ParamSet& params) {
  const Tensor g = as_positions(features);
  const std::size_t b = g.dim(0), p = g.dim(1), c = g.dim(2);
  const Tensor& u = param(params, "att.u");
  const Tensor proj = matmul(reshape(g, {b * p, c}), u);
  return add(reshape(proj, {b, p, u.dim(1)}), param(params, "att.b_h"));
}

Attention attend(const Tensor& features, const Tensor& keys, const Tensor& h_prev,
                 const ParamSet& params) {
  const Tensor g = as_positions(features);
  const std::size_t b = g.dim(0), p = g.dim(1), c = g.dim(2);
  const Tensor& w_h = param(params, "att.w_h");
  const std::size_t d_att = w_h.dim(1);
  if (keys.shape() != Shape{b, p, d_att} || h_prev.rank() != 2 || h_prev.dim(0) != b) {
    throw ShapeError("attention: keys " + shape_str(keys.shape()) + ", state " +
                     shape_str(h_prev.shape()) + " inconsistent with features " +
                     shape_str(g.shape()));
  }
  const Tensor query = repeat_axis(reshape(matmul(h_prev, w_h), {b, 1, d_att}), 1, p);
  const Tensor hidden = tanh(add(query, keys));
  const Tensor scores = add(reshape(matmul(reshape(hidden, {b * p, d_att}), param(params, "att.theta")),
                                    {b, p}),
                            param(params, "att.b"));
  const Tensor alpha = softmax(scores, 1);
  const Tensor context = reshape(matmul(reshape(alpha, {b, 1, p}), g), {b, c});
  return {alpha, context};
}

Attention attention(const Tensor& features, const Tensor& h_prev, const ParamSet& params) {
  return attend(features, attention_keys(features, params), h_prev, params);
}

LstmState decoder_step(const LstmState& state, const Tensor& context, const Tensor& prev_emb,
                       const Tensor& side, const ParamSet& params) {
  return lstm_cell(with_side({context, prev_emb}, side), state, param(params, "dec.lstm.wx"),
                   param(params, "dec.lstm.wh"), param(params, "dec.lstm.b"));
}

Tensor word_logits(const Tensor& h, const Tensor& context, const Tensor& prev_emb,
                   const Tensor& side, const ParamSet& params) {
  const Tensor hidden =
      tanh(linear(with_side({h, context, prev_emb}, side), param(params, "out.w_p"),
                  param(params, "out.b_p")));
  return add(matmul(hidden, param(params, "out.theta")), param(params, "out.d"));
}

Tensor word_distribution(const Tensor& h, const Tensor& context, const Tensor& prev_emb,
                         const Tensor& side, const ParamSet& params) {
  return softmax(word_logits(h, context, prev_emb, side, params), 1);
}

Tensor teacher_forced_loss(const Tensor& features, const Tensor& side,
                           const std::vector<std::vector<int>>& gold, const Tensor& embedding,
                           const ParamSet& params, std::size_t max_len) {
  const Tensor g = as_positions(features);
  const std::size_t batch = g.dim(0);
  if (gold.size() != batch) {
    throw ShapeError("teacher_forced_loss: " + std::to_string(gold.size()) +
                     " gold sequences for a batch of " + std::to_string(batch));
  }
  std::size_t steps = 0;
  for (const auto& seq : gold) {
    if (seq.size() < 2 || seq.front() != Vocabulary::kBos || seq.back() != Vocabulary::kEos) {
      throw ValidationError("teacher_forced_loss: gold sequences must start with <bos> and end "
                            "with <eos>");
    }
    if (seq.size() - 1 > max_len) {
      throw ValidationError("teacher_forced_loss: gold sequence predicts " +
                            std::to_string(seq.size() - 1) + " tokens, max_len is " +
                            std::to_string(max_len));
    }
    steps = std::max(steps, seq.size() - 1);
  }
  const Tensor keys = attention_keys(g, params);
  LstmState state = lstm_zero_state(batch, param(params, "dec.lstm.wh").dim(0));
  Tensor total;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<int> prev(batch), target(batch);
    for (std::size_t r = 0; r < batch; ++r) {
      const bool active = t + 1 < gold[r].size();
      prev[r] = active ? gold[r][t] : Vocabulary::kPad;
      target[r] = active ? gold[r][t + 1] : -1;
    }
    const Tensor emb = embed_lookup(embedding, prev);
    const Attention att = attend(g, keys, state.h, params);
    state = decoder_step(state, att.context, emb, side, params);
    const Tensor ce = cross_entropy(word_logits(state.h, att.context, emb, side, params), target);
    total = total.defined() ? add(total, ce) : ce;
  }
  std::vector<float> inv_len(batch);
  for (std::size_t r = 0; r < batch; ++r) inv_len[r] = 1.0f / static_cast<float>(gold[r].size() - 1);
  return mean(mul(total, Tensor({batch}, std::move(inv_len))));
}

std::vector<std::vector<int>> decode_greedy(const Tensor& features, const Tensor& side,
                                            const Tensor& embedding, const ParamSet& params,
                                            std::size_t max_len) {
  NoGradGuard no_grad;
  const Tensor g = as_positions(features);
  const std::size_t batch = g.dim(0);
  const Tensor keys = attention_keys(g, params);
  LstmState state = lstm_zero_state(batch, param(params, "dec.lstm.wh").dim(0));
  std::vector<std::vector<int>> out(batch);
  std::vector<int> prev(batch, Vocabulary::kBos);
  std::vector<bool> done(batch, false);
  for (std::size_t t = 0; t < max_len; ++t) {
    const Tensor emb = embed_lookup(embedding, prev);
    const Attention att = attend(g, keys, state.h, params);
    state = decoder_step(state, att.context, emb, side, params);
    const Tensor logits = word_logits(state.h, att.context, emb, side, params);
    const std::size_t vocab = logits.dim(1);
    const auto data = logits.data();
    bool all_done = true;
    for (std::size_t r = 0; r < batch; ++r) {
      std::size_t best = 0;
      for (std::size_t v = 1; v < vocab; ++v) {
        if (data[r * vocab + v] > data[r * vocab + best]) best = v;
      }
      prev[r] = static_cast<int>(best);
      if (done[r]) continue;
      if (best == Vocabulary::kEos) {
        done[r] = true;
      } else {
        out[r].push_back(static_cast<int>(best));
      }
      all_done = all_done && done[r];
    }
    if (all_done) break;
  }
  return out;
}

}  // namespace metaquill
