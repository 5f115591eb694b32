// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// Manifest ingestion and curation: category remapping, merging with image
// deduplication, overlap-free category splits and corpus statistics.

#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace metaquill {

struct Record {
  std::string image_id;
  // Path to a rank-3 TNSR file (raw image or feature map), relative to the
  // manifest's directory unless absolute.
  std::string image_ref;
  std::string question;
  std::string answer;
  std::string answer_category;
  std::optional<std::string> question_category;
  std::string source = "A";

  bool operator==(const Record&) const = default;
};

nlohmann::json to_json(const Record& r);
// Throws ValidationError describing the offending field.
Record record_from_json(const nlohmann::json& j);

struct Manifest {
  std::vector<Record> records;
  // Exact duplicates (image_id, question, answer) collapsed while loading.
  std::size_t duplicates_collapsed = 0;
};

// JSONL, one record per line; blank lines are skipped. Malformed lines are
// reported as "<origin>:<line>: ...". The same image_id with two different
// image_refs is an error.
Manifest parse_manifest(std::istream& in, const std::string& origin);
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
std::string dump_manifest(const Manifest& manifest);

// Which label a record is grouped by.
enum class CategorySource { answer, question };
CategorySource parse_category_source(const std::string& name);
const std::string& category_of(const Record& r, CategorySource source);

// Ordered first-match-wins rules. A rule matches when every predicate it
// carries holds; a rule with no predicates matches everything and must be
// the last one.
struct CategoryRule {
  std::set<std::string> answer_tokens;  // any answer token in the set
  std::set<std::string> old_category;   // current answer_category in the set
  std::optional<std::string> category;  // target; empty means keep current
  bool matches(const Record& r) const;
  bool unconditional() const { return answer_tokens.empty() && old_category.empty(); }
};

struct CategoryMap {
  std::vector<CategoryRule> rules;

  // Checks totality: exactly one unconditional rule, in last position.
  void validate() const;
  static CategoryMap from_json(const nlohmann::json& j);
  static CategoryMap load(const std::filesystem::path& path);
  // Maps every category to itself.
  static CategoryMap identity();
};

Manifest recategorize(const Manifest& manifest, const CategoryMap& map);

struct MergeOptions {
  // On conflicting image_refs for one image_id keep the first manifest's ref
  // instead of failing.
  bool override_conflicts = false;
};

// Union of both manifests. Images present in both keep a single image_ref
// and all their QA pairs; exact duplicate records are collapsed.
Manifest merge_dedup(const Manifest& a, const Manifest& b, const MergeOptions& options = {});

struct SplitSpec {
  std::set<std::string> train_categories;
  std::set<std::string> test_categories;

  void validate() const;
  static SplitSpec from_json(const nlohmann::json& j);
  static SplitSpec load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct SplitResult {
  Manifest train;
  Manifest test;
  // Minority-side records of images whose records straddled both sides.
  std::vector<Record> dropped;
};

// Routes records by category. An image whose records fall on both sides is
// assigned to the side holding most of its records (ties go to train); its
// records on the other side are dropped.
SplitResult split(const Manifest& manifest, const SplitSpec& spec,
                  CategorySource source = CategorySource::answer);

struct CategoryStats {
  std::size_t images = 0;
  std::size_t questions = 0;
};

struct Stats {
  std::map<std::string, CategoryStats> per_category;
  std::size_t records = 0;
  std::size_t unique_images = 0;
  std::size_t unique_questions = 0;
  std::size_t unique_answers = 0;
  std::size_t unique_qa_pairs = 0;

  nlohmann::json to_json() const;
};

// Questions and answers are compared after tokenisation, so case and
// punctuation differences do not create distinct entries.
Stats stats(const Manifest& manifest, CategorySource source = CategorySource::answer);

// Unique QA pairs per unique answer.
double variety_ratio(std::size_t unique_qa_pairs, std::size_t unique_answers);
double variety_ratio(const Stats& s);
// Two-decimal rendering used in reports, e.g. "3.01".
std::string format_ratio(double ratio);

}  // namespace metaquill
