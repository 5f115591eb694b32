// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference implementations of the generation metrics. They
// favour directness over speed and share no code with the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using Seq = std::vector<std::string>;

struct Item {
  Seq cand;
  std::vector<Seq> refs;
};

inline std::vector<Seq> all_ngrams(const Seq& s, std::size_t n) {
  std::vector<Seq> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.emplace_back(s.begin() + i, s.begin() + i + n);
  return out;
}

inline std::size_t occurrences(const std::vector<Seq>& grams, const Seq& g) {
  return static_cast<std::size_t>(std::count(grams.begin(), grams.end(), g));
}

inline double bleu4(const std::vector<Item>& items) {
  double match[4] = {0, 0, 0, 0}, tot[4] = {0, 0, 0, 0};
  double c_len = 0, r_len = 0;
  for (const auto& it : items) {
    c_len += it.cand.size();
    std::vector<std::pair<long, long>> by_distance;
    for (const auto& r : it.refs) {
      const long d = std::labs(static_cast<long>(r.size()) - static_cast<long>(it.cand.size()));
      by_distance.emplace_back(d, static_cast<long>(r.size()));
    }
    std::sort(by_distance.begin(), by_distance.end());
    r_len += by_distance.front().second;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cg = all_ngrams(it.cand, n);
      tot[n - 1] += cg.size();
      for (std::size_t k = 0; k < cg.size(); ++k) {
        // Count each distinct n-gram once, at its first occurrence.
        if (std::find(cg.begin(), cg.begin() + k, cg[k]) != cg.begin() + k) continue;
        std::size_t cap = 0;
        for (const auto& r : it.refs) cap = std::max(cap, occurrences(all_ngrams(r, n), cg[k]));
        match[n - 1] += std::min(occurrences(cg, cg[k]), cap);
      }
    }
  }
  if (match[0] == 0) return 0.0;
  double logp = 0;
  for (int n = 0; n < 4; ++n) {
    logp += std::log(match[n] == 0 ? 1.0 / (tot[n] + 1.0) : match[n] / tot[n]);
  }
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::exp(0.25 * logp);
}

// Longest common subsequence by enumerating every subsequence of `a`.
inline std::size_t lcs_enumerate(const Seq& a, const Seq& b) {
  std::size_t best = 0;
  const std::uint32_t limit = 1u << a.size();
  for (std::uint32_t mask = 0; mask < limit; ++mask) {
    Seq sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (1u << i)) sub.push_back(a[i]);
    }
    if (sub.size() <= best) continue;
    std::size_t j = 0;
    for (std::size_t i = 0; i < b.size() && j < sub.size(); ++i) {
      if (b[i] == sub[j]) ++j;
    }
    if (j == sub.size()) best = sub.size();
  }
  return best;
}

inline double rouge_l(const std::vector<Item>& items, double beta = 1.2) {
  double sum = 0;
  for (const auto& it : items) {
    double best = 0;
    for (const auto& r : it.refs) {
      const double l = static_cast<double>(lcs_enumerate(it.cand, r));
      if (l == 0) continue;
      const double prec = l / it.cand.size(), rec = l / r.size();
      best = std::max(best, (1 + beta * beta) * prec * rec / (rec + beta * beta * prec));
    }
    sum += best;
  }
  return sum / items.size();
}

// Dense TF-IDF vectors over every n-gram seen anywhere in the corpus.
inline double cider(const std::vector<Item>& items, int max_n = 4, double sigma = 6.0) {
  const double n_docs = static_cast<double>(items.size());
  double total = 0;
  for (const auto& it : items) {
    double item_score = 0;
    for (const auto& ref : it.refs) {
      double sum_n = 0;
      for (int n = 1; n <= max_n; ++n) {
        std::vector<Seq> vocab;
        for (const auto& other : items) {
          for (const auto& g : all_ngrams(other.cand, n)) vocab.push_back(g);
          for (const auto& r : other.refs) {
            for (const auto& g : all_ngrams(r, n)) vocab.push_back(g);
          }
        }
        std::sort(vocab.begin(), vocab.end());
        vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
        std::vector<double> h(vocab.size()), r(vocab.size());
        for (std::size_t v = 0; v < vocab.size(); ++v) {
          double df = 0;
          for (const auto& other : items) {
            bool seen = false;
            for (const auto& rr : other.refs) seen = seen || occurrences(all_ngrams(rr, n), vocab[v]) > 0;
            if (seen) df += 1;
          }
          const double idf = std::log(n_docs) - std::log(std::max(1.0, df));
          h[v] = occurrences(all_ngrams(it.cand, n), vocab[v]) * idf;
          r[v] = occurrences(all_ngrams(ref, n), vocab[v]) * idf;
        }
        double dot = 0, nh = 0, nr = 0;
        for (std::size_t v = 0; v < vocab.size(); ++v) {
          dot += std::min(h[v], r[v]) * r[v];
          nh += h[v] * h[v];
          nr += r[v] * r[v];
        }
        double val = dot;
        if (nh != 0 && nr != 0) val /= std::sqrt(nh) * std::sqrt(nr);
        const double delta = static_cast<double>(it.cand.size()) - static_cast<double>(ref.size());
        sum_n += val * std::exp(-delta * delta / (2 * sigma * sigma));
      }
      item_score += sum_n / max_n;
    }
    total += 10.0 * item_score / it.refs.size();
  }
  return total / items.size();
}

struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

// Tries every assignment of candidate positions to unused equal reference
// positions (or to nothing); keeps the most matches, then fewest chunks.
inline Alignment meteor_exhaustive(const Seq& cand, const Seq& ref) {
  Alignment best;
  std::vector<long> map(cand.size(), -1);
  std::vector<bool> used(ref.size(), false);
  auto evaluate = [&] {
    Alignment a;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (map[i] < 0) continue;
      ++a.matches;
      const bool continues = i > 0 && map[i - 1] >= 0 && map[i] == map[i - 1] + 1;
      if (!continues) ++a.chunks;
    }
    if (a.matches > best.matches || (a.matches == best.matches && a.chunks < best.chunks)) best = a;
  };
  auto rec = [&](auto&& self, std::size_t i) -> void {
    if (i == cand.size()) {
      evaluate();
      return;
    }
    map[i] = -1;
    self(self, i + 1);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (used[j] || ref[j] != cand[i]) continue;
      used[j] = true;
      map[i] = static_cast<long>(j);
      self(self, i + 1);
      map[i] = -1;
      used[j] = false;
    }
  };
  best.chunks = std::numeric_limits<std::size_t>::max();
  rec(rec, 0);
  if (best.matches == 0) best.chunks = 0;
  return best;
}

inline double meteor_s(const std::vector<Item>& items) {
  double sum = 0;
  for (const auto& it : items) {
    double best = 0;
    for (const auto& ref : it.refs) {
      const Alignment a = meteor_exhaustive(it.cand, ref);
      if (a.matches == 0) continue;
      const double m = static_cast<double>(a.matches);
      const double prec = m / it.cand.size(), rec = m / ref.size();
      const double f = 10 * prec * rec / (rec + 9 * prec);
      const double frag = static_cast<double>(a.chunks) / m;
      best = std::max(best, f * (1 - 0.5 * std::pow(frag, 3)));
    }
    sum += best;
  }
  return sum / items.size();
}

}  // namespace oracle
