// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference-based generation metrics. All scores are in [0, 1] except CIDEr,
// which is nonnegative and scaled by 10.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace metaquill {

using Tokens = std::vector<std::string>;

struct ScoredItem {
  std::string id;
  Tokens candidate;
  std::vector<Tokens> references;
};

using Corpus = std::vector<ScoredItem>;

// Corpus BLEU-4: clipped n-gram counts and lengths are pooled over the
// corpus before forming precisions. A zero match count at n >= 2 is
// smoothed to 1 / (total + 1). The brevity penalty uses, per item, the
// reference length closest to the candidate (shorter on ties).
double bleu4(const Corpus& corpus);

// Mean over items of the best LCS F-measure against any reference.
double rouge_l(const Corpus& corpus, double beta = 1.2);

// CIDEr-D: TF-IDF weighted n-gram cosine (n = 1..max_n) with clipping and a
// Gaussian length penalty, averaged over references and n, times 10. IDF is
// computed over the corpus's reference sets, so at least two items are
// required.
double cider(const Corpus& corpus, int max_n = 4, double sigma = 6.0);

// Simplified METEOR: exact unigram matches only. The alignment maximises
// matches, then minimises chunks. Best reference per item, mean over items.
double meteor_s(const Corpus& corpus);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};
// Alignment statistics for one candidate/reference pair.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);
double meteor_pair(const Tokens& candidate, const Tokens& reference);

double lcs_length(const Tokens& a, const Tokens& b);

struct Scores {
  double bleu4 = 0;
  double meteor_s = 0;
  double rougeL = 0;
  double cider = 0;

  // The raw values plus an "x100" object holding the same four scaled by 100.
  nlohmann::json to_json() const;
};

struct MetricOptions {
  double rouge_beta = 1.2;
  int cider_max_n = 4;
  double cider_sigma = 6.0;

  nlohmann::json to_json() const;
  static MetricOptions from_json(const nlohmann::json& j);
};

Scores score_corpus(const Corpus& corpus, const MetricOptions& options = {});

// Per-item scores with the same definitions applied to one-item corpora
// (CIDEr keeps corpus-level IDF).
nlohmann::json per_item_scores(const Corpus& corpus, const MetricOptions& options = {});

// JSONL lines {id, candidate, references: [...]}; strings are tokenised.
Corpus load_predictions(const std::filesystem::path& path);

}  // namespace metaquill
