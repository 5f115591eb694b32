// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <unordered_map>

#include "metaquill/errors.hpp"
#include "metaquill/text.hpp"

namespace metaquill {

namespace {

using NgramCounts = std::map<Tokens, std::size_t>;

NgramCounts ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    out[Tokens(tokens.begin() + i, tokens.begin() + i + n)]++;
  }
  return out;
}

void require_nonempty(const Corpus& corpus, const char* metric) {
  if (corpus.empty()) throw ValidationError(std::string(metric) + ": empty corpus");
  for (const auto& item : corpus) {
    if (item.candidate.empty()) {
      throw ValidationError(std::string(metric) + ": empty candidate for item '" + item.id + "'");
    }
    if (item.references.empty()) {
      throw ValidationError(std::string(metric) + ": item '" + item.id + "' has no references");
    }
    for (const auto& ref : item.references) {
      if (ref.empty()) {
        throw ValidationError(std::string(metric) + ": empty reference for item '" + item.id +
                              "'");
      }
    }
  }
}

std::size_t closest_ref_length(const ScoredItem& item) {
  const auto c = static_cast<long>(item.candidate.size());
  std::size_t best = item.references.front().size();
  for (const auto& ref : item.references) {
    const auto r = static_cast<long>(ref.size());
    const auto b = static_cast<long>(best);
    if (std::abs(r - c) < std::abs(b - c) || (std::abs(r - c) == std::abs(b - c) && r < b)) {
      best = ref.size();
    }
  }
  return best;
}

}  // namespace

double bleu4(const Corpus& corpus) {
  require_nonempty(corpus, "bleu4");
  double matched[5] = {0}, total[5] = {0};
  double cand_len = 0, ref_len = 0;
  for (const auto& item : corpus) {
    cand_len += item.candidate.size();
    ref_len += closest_ref_length(item);
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cand = ngrams(item.candidate, n);
      NgramCounts max_ref;
      for (const auto& ref : item.references) {
        for (const auto& [g, c] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : cand) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n] += std::min(c, it->second);
        total[n] += c;
      }
    }
  }
  if (matched[1] == 0) return 0.0;
  double log_sum = 0;
  for (int n = 1; n <= 4; ++n) {
    const double p = matched[n] > 0 ? matched[n] / total[n] : 1.0 / (total[n] + 1.0);
    log_sum += std::log(p);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / 4.0);
}

double lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[b.size()]);
}

namespace {

double rouge_item(const ScoredItem& item, double beta) {
  double best = 0;
  for (const auto& ref : item.references) {
    const double lcs = lcs_length(item.candidate, ref);
    if (lcs == 0) continue;
    const double r = lcs / ref.size(), p = lcs / item.candidate.size();
    const double f = (1 + beta * beta) * r * p / (r + beta * beta * p);
    best = std::max(best, f);
  }
  return best;
}

}  // namespace

double rouge_l(const Corpus& corpus, double beta) {
  require_nonempty(corpus, "rougeL");
  double sum = 0;
  for (const auto& item : corpus) sum += rouge_item(item, beta);
  return sum / corpus.size();
}

namespace {

struct CiderVec {
  std::vector<std::map<Tokens, double>> weights;
  std::vector<double> norms;
  double length = 0;
};

class CiderScorer {
 public:
  CiderScorer(const Corpus& corpus, int max_n, double sigma) : max_n_(max_n), sigma_(sigma) {
    if (corpus.size() < 2) {
      throw ValidationError("cider: document frequencies need at least two items, got " +
                            std::to_string(corpus.size()));
    }
    for (const auto& item : corpus) {
      std::map<Tokens, bool> present;
      for (const auto& ref : item.references) {
        for (int n = 1; n <= max_n_; ++n) {
          for (const auto& [g, c] : ngrams(ref, n)) present[g] = true;
        }
      }
      for (const auto& [g, p] : present) df_[g] += 1.0;
    }
    log_n_ = std::log(static_cast<double>(corpus.size()));
  }

  double score(const ScoredItem& item) const {
    const CiderVec hyp = vec(item.candidate);
    double total = 0;
    for (const auto& ref : item.references) {
      const CiderVec rv = vec(ref);
      const double delta = hyp.length - rv.length;
      double per_n = 0;
      for (int n = 0; n < max_n_; ++n) {
        double val = 0;
        for (const auto& [g, w] : hyp.weights[n]) {
          auto it = rv.weights[n].find(g);
          if (it != rv.weights[n].end()) val += std::min(w, it->second) * it->second;
        }
        if (hyp.norms[n] != 0 && rv.norms[n] != 0) val /= hyp.norms[n] * rv.norms[n];
        val *= std::exp(-(delta * delta) / (2 * sigma_ * sigma_));
        per_n += val;
      }
      total += per_n / max_n_;
    }
    return 10.0 * total / item.references.size();
  }

 private:
  CiderVec vec(const Tokens& tokens) const {
    CiderVec v;
    v.weights.resize(max_n_);
    v.norms.assign(max_n_, 0.0);
    v.length = static_cast<double>(tokens.size());
    for (int n = 1; n <= max_n_; ++n) {
      for (const auto& [g, tf] : ngrams(tokens, n)) {
        auto it = df_.find(g);
        const double df = it == df_.end() ? 0.0 : it->second;
        const double w = tf * (log_n_ - std::log(std::max(1.0, df)));
        v.weights[n - 1][g] = w;
        v.norms[n - 1] += w * w;
      }
      v.norms[n - 1] = std::sqrt(v.norms[n - 1]);
    }
    return v;
  }

  int max_n_;
  double sigma_;
  double log_n_ = 0;
  std::map<Tokens, double> df_;
};

}  // namespace

double cider(const Corpus& corpus, int max_n, double sigma) {
  require_nonempty(corpus, "cider");
  if (max_n < 1) throw ValidationError("cider: n must be at least 1");
  const CiderScorer scorer(corpus, max_n, sigma);
  double sum = 0;
  for (const auto& item : corpus) sum += scorer.score(item);
  return sum / corpus.size();
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  // Every maximum alignment matches exactly min(count_cand, count_ref)
  // occurrences of each word, which makes "may this position stay
  // unmatched" a local decision.
  std::map<std::string, std::size_t> cand_count, ref_count;
  for (const auto& t : candidate) cand_count[t]++;
  for (const auto& t : reference) ref_count[t]++;
  std::map<std::string, std::size_t> need;
  std::size_t matches = 0;
  for (const auto& [t, c] : cand_count) {
    auto it = ref_count.find(t);
    if (it == ref_count.end()) continue;
    need[t] = std::min(c, it->second);
    matches += need[t];
  }
  if (matches == 0) return {};

  // Suffix counts of each word in the candidate.
  std::vector<std::size_t> remaining_after(candidate.size());
  {
    std::map<std::string, std::size_t> seen;
    for (std::size_t i = candidate.size(); i-- > 0;) {
      remaining_after[i] = seen[candidate[i]];
      seen[candidate[i]]++;
    }
  }

  std::unordered_map<std::string, std::size_t> memo;
  std::string used(reference.size(), '0');
  std::map<std::string, std::size_t> matched_so_far;
  // Minimum number of chunk starts among positions i.. given the ref
  // position matched at i-1 (or -1).
  std::function<std::size_t(std::size_t, long)> best = [&](std::size_t i, long prev) {
    if (i == candidate.size()) return std::size_t{0};
    std::string key = used;
    key += '|' + std::to_string(i) + '|' + std::to_string(prev);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const auto& tok = candidate[i];
    std::size_t result = static_cast<std::size_t>(-1) / 2;
    auto need_it = need.find(tok);
    const std::size_t still_needed =
        need_it == need.end() ? 0 : need_it->second - matched_so_far[tok];
    if (remaining_after[i] >= still_needed) result = best(i + 1, -1);
    if (still_needed > 0) {
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (used[j] == '1' || reference[j] != tok) continue;
        used[j] = '1';
        matched_so_far[tok]++;
        const std::size_t start = prev >= 0 && static_cast<long>(j) == prev + 1 ? 0 : 1;
        result = std::min(result, start + best(i + 1, static_cast<long>(j)));
        matched_so_far[tok]--;
        used[j] = '0';
      }
    }
    memo.emplace(std::move(key), result);
    return result;
  };
  return {matches, best(0, -1)};
}

double meteor_pair(const Tokens& candidate, const Tokens& reference) {
  const auto a = meteor_align(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / candidate.size(), r = m / reference.size();
  const double fmean = 10 * p * r / (r + 9 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  return fmean * (1 - 0.5 * frag * frag * frag);
}

double meteor_s(const Corpus& corpus) {
  require_nonempty(corpus, "meteor_s");
  double sum = 0;
  for (const auto& item : corpus) {
    double best = 0;
    for (const auto& ref : item.references) best = std::max(best, meteor_pair(item.candidate, ref));
    sum += best;
  }
  return sum / corpus.size();
}

nlohmann::json Scores::to_json() const {
  return {{"bleu4", bleu4},
          {"meteor_s", meteor_s},
          {"rougeL", rougeL},
          {"cider", cider},
          {"x100",
           {{"bleu4", bleu4 * 100},
            {"meteor_s", meteor_s * 100},
            {"rougeL", rougeL * 100},
            {"cider", cider * 100}}}};
}

nlohmann::json MetricOptions::to_json() const {
  return {{"rouge_beta", rouge_beta}, {"cider_max_n", cider_max_n}, {"cider_sigma", cider_sigma}};
}

MetricOptions MetricOptions::from_json(const nlohmann::json& j) {
  MetricOptions o;
  try {
    o.rouge_beta = j.at("rouge_beta").get<double>();
    o.cider_max_n = j.at("cider_max_n").get<int>();
    o.cider_sigma = j.at("cider_sigma").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("metric options: ") + e.what());
  }
  if (!(o.rouge_beta > 0) || o.cider_max_n < 1 || !(o.cider_sigma > 0)) {
    throw ValidationError("metric options: rouge_beta, cider_max_n and cider_sigma must be positive");
  }
  return o;
}

Scores score_corpus(const Corpus& corpus, const MetricOptions& options) {
  Scores s;
  s.bleu4 = bleu4(corpus);
  s.meteor_s = meteor_s(corpus);
  s.rougeL = rouge_l(corpus, options.rouge_beta);
  s.cider = cider(corpus, options.cider_max_n, options.cider_sigma);
  return s;
}

nlohmann::json per_item_scores(const Corpus& corpus, const MetricOptions& options) {
  require_nonempty(corpus, "score");
  const CiderScorer scorer(corpus, options.cider_max_n, options.cider_sigma);
  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : corpus) {
    const Corpus one{item};
    items.push_back({{"id", item.id},
                     {"candidate", join_tokens(item.candidate)},
                     {"bleu4", bleu4(one)},
                     {"meteor_s", meteor_s(one)},
                     {"rougeL", rouge_l(one, options.rouge_beta)},
                     {"cider", scorer.score(item)}});
  }
  return items;
}

Corpus load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read predictions " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      ScoredItem item;
      item.id = j.contains("id") ? (j.at("id").is_string() ? j.at("id").get<std::string>()
                                                          : j.at("id").dump())
                                 : std::to_string(lineno);
      item.candidate = tokenize(j.at("candidate").get<std::string>());
      for (const auto& ref : j.at("references")) {
        item.references.push_back(tokenize(ref.get<std::string>()));
      }
      corpus.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + e.what());
    }
  }
  return corpus;
}

}  // namespace metaquill
