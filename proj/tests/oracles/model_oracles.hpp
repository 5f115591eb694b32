// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar-loop versions of the model's layers, written from the layer
// equations in double precision.

#pragma once

#include <cmath>
#include <vector>

#include "metaquill/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;
using metaquill::Tensor;

// x[in] . W[in,out] + b[out]
inline Vec affine(const Vec& x, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  Vec y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double s = b.defined() ? b.at(j) : 0.0;
    for (std::size_t i = 0; i < in; ++i) s += x[i] * w.at(i * out + j);
    y[j] = s;
  }
  return y;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct Lstm {
  Vec h, c;
};

// Gate blocks in the order input, forget, candidate, output.
inline Lstm lstm_step(const Vec& x, const Lstm& s, const Tensor& wx, const Tensor& wh,
                      const Tensor& b) {
  const std::size_t d = wh.dim(0);
  Vec pre = affine(x, wx, b);
  const Vec rec = affine(s.h, wh, Tensor());
  for (std::size_t k = 0; k < pre.size(); ++k) pre[k] += rec[k];
  Lstm out{Vec(d), Vec(d)};
  for (std::size_t j = 0; j < d; ++j) {
    const double i = sigmoid(pre[j]);
    const double f = sigmoid(pre[d + j]);
    const double g = std::tanh(pre[2 * d + j]);
    const double o = sigmoid(pre[3 * d + j]);
    out.c[j] = f * s.c[j] + i * g;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

inline Vec row(const Tensor& t, std::size_t r) {
  const std::size_t w = t.dim(t.rank() - 1);
  Vec v(w);
  for (std::size_t j = 0; j < w; ++j) v[j] = t.at(r * w + j);
  return v;
}

struct Attn {
  Vec alpha;
  Vec context;
};

// Features G[P,c] for one image; keys u_p = U g_p + b_h, scores
// theta . tanh(W_h h + u_p) + b.
inline Attn attention(const Tensor& g, const Vec& h, const Tensor& w_h, const Tensor& u,
                      const Tensor& b_h, const Tensor& theta, double b) {
  const std::size_t p = g.dim(0), c = g.dim(1);
  const Vec q = affine(h, w_h, Tensor());
  Vec scores(p);
  for (std::size_t k = 0; k < p; ++k) {
    const Vec key = affine(row(g, k), u, b_h);
    double s = b;
    for (std::size_t j = 0; j < key.size(); ++j) s += theta.at(j) * std::tanh(q[j] + key[j]);
    scores[k] = s;
  }
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double z = 0;
  for (double s : scores) z += std::exp(s - mx);
  Attn a{Vec(p), Vec(c, 0.0)};
  for (std::size_t k = 0; k < p; ++k) {
    a.alpha[k] = std::exp(scores[k] - mx) / z;
    for (std::size_t j = 0; j < c; ++j) a.context[j] += a.alpha[k] * g.at(k * c + j);
  }
  return a;
}

inline Vec softmax(const Vec& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double z = 0;
  for (double x : v) z += std::exp(x - mx);
  Vec out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = std::exp(v[k] - mx) / z;
  return out;
}

// Direct 3x3 cross-correlation of [C,H,W] with [Co,C,3,3], stride 1.
inline std::vector<double> conv3x3(const std::vector<double>& x, std::size_t c, std::size_t h,
                                   std::size_t w, const Tensor& k, const Tensor& b, bool same,
                                   std::size_t& ho, std::size_t& wo) {
  const std::size_t co = k.dim(0);
  const long pad = same ? 1 : 0;
  ho = same ? h : h - 2;
  wo = same ? w : w - 2;
  std::vector<double> out(co * ho * wo);
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        double s = b.at(o);
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (long di = 0; di < 3; ++di) {
            for (long dj = 0; dj < 3; ++dj) {
              const long yi = static_cast<long>(i) + di - pad, yj = static_cast<long>(j) + dj - pad;
              if (yi < 0 || yj < 0 || yi >= static_cast<long>(h) || yj >= static_cast<long>(w)) continue;
              s += x[(ci * h + yi) * w + yj] * k.at(((o * c + ci) * 3 + di) * 3 + dj);
            }
          }
        }
        out[(o * ho + i) * wo + j] = s;
      }
    }
  }
  return out;
}

inline std::vector<double> relu_pool(const std::vector<double>& x, std::size_t c, std::size_t h,
                                     std::size_t w) {
  std::vector<double> out(c * (h / 2) * (w / 2));
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h / 2; ++i) {
      for (std::size_t j = 0; j < w / 2; ++j) {
        double m = 0;  // relu folded in: max(0, max of window)
        for (std::size_t a = 0; a < 2; ++a) {
          for (std::size_t bb = 0; bb < 2; ++bb) m = std::max(m, x[(ch * h + 2 * i + a) * w + 2 * j + bb]);
        }
        out[(ch * (h / 2) + i) * (w / 2) + j] = m;
      }
    }
  }
  return out;
}

}  // namespace oracle
