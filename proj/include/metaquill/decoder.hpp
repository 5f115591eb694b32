// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Attention LSTM question decoder. Shapes are batched: feature maps
// [B,P,c] (P = h*w spatial positions), states [B,d_h].
//
// At step t, with previous word z and previous hidden state h_{t-1}:
//   A(x,y)  = theta_h . tanh(W_h h_{t-1} + U G(x,y) + b_h) + b
//   alpha   = softmax of A over all positions
//   phi     = sum over positions of alpha(x,y) G(x,y)
//   h_t     = LSTM([phi, E(z) (, s)], h_{t-1})
//   p(z_t)  = softmax(Theta_p tanh(W_p [h_t, phi, E(z) (, s)] + b_p) + d)
// Theta_p has one row per vocabulary word and d one bias per word. The side
// embedding s is present only when it is routed to the decoder instead of
// conditioning the features.

#pragma once

#include <cstdint>
#include <vector>

#include "metaquill/layers.hpp"
#include "metaquill/params.hpp"
#include "metaquill/tensor.hpp"

namespace metaquill {

struct DecoderDims {
  std::size_t channels = 16;
  std::size_t d_w = 32;
  std::size_t d_h = 64;
  std::size_t d_att = 64;
  std::size_t d_p = 64;
  std::size_t vocab = 4;
  // Width of the side embedding fed to the decoder; 0 when none is.
  std::size_t side = 0;
};

// att.{w_h,u,b_h,theta,b}, dec.lstm.{wx,wh,b}, out.{w_p,b_p,theta,d}.
void init_decoder(ParamSet& params, const DecoderDims& dims, std::uint64_t seed);

struct Attention {
  Tensor alpha;    // [B,P], rows sum to 1
  Tensor context;  // [B,c]
};

// U G + b_h for every position, [B,P,d_att]. Constant across steps.
Tensor attention_keys(const Tensor& features, const ParamSet& params);
Attention attend(const Tensor& features, const Tensor& keys, const Tensor& h_prev,
                 const ParamSet& params);
Attention attention(const Tensor& features, const Tensor& h_prev, const ParamSet& params);

// One LSTM update on [context, prev_emb (, side)]. `side` may be undefined.
LstmState decoder_step(const LstmState& state, const Tensor& context, const Tensor& prev_emb,
                       const Tensor& side, const ParamSet& params);

// Pre-softmax word scores [B,V].
Tensor word_logits(const Tensor& h, const Tensor& context, const Tensor& prev_emb,
                   const Tensor& side, const ParamSet& params);
Tensor word_distribution(const Tensor& h, const Tensor& context, const Tensor& prev_emb,
                         const Tensor& side, const ParamSet& params);

// Mean over each sequence's steps of the cross-entropy of the gold next
// word, feeding gold previous words; then mean over the batch. Every gold
// sequence starts with <bos>, ends with <eos> and predicts at most max_len
// tokens.
Tensor teacher_forced_loss(const Tensor& features, const Tensor& side,
                           const std::vector<std::vector<int>>& gold, const Tensor& embedding,
                           const ParamSet& params, std::size_t max_len);

// Greedy argmax decoding from <bos>; each output stops before <eos> or after
// max_len tokens. Ties resolve to the lowest token id.
std::vector<std::vector<int>> decode_greedy(const Tensor& features, const Tensor& side,
                                            const Tensor& embedding, const ParamSet& params,
                                            std::size_t max_len);

}  // namespace metaquill
