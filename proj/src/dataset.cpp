// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "metaquill/errors.hpp"
#include "metaquill/text.hpp"

namespace metaquill {

using nlohmann::json;

json to_json(const Record& r) {
  json j = {{"image_id", r.image_id},
            {"image_ref", r.image_ref},
            {"question", r.question},
            {"answer", r.answer},
            {"answer_category", r.answer_category},
            {"source", r.source}};
  if (r.question_category) j["question_category"] = *r.question_category;
  return j;
}

namespace {

std::string required_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
  auto s = it->get<std::string>();
  if (s.empty()) throw ValidationError(std::string("field '") + key + "' is empty");
  return s;
}

std::string dup_key(const Record& r) {
  return r.image_id + '\x1f' + r.question + '\x1f' + r.answer;
}

}  // namespace

Record record_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  Record r;
  r.image_id = required_string(j, "image_id");
  r.image_ref = required_string(j, "image_ref");
  r.question = required_string(j, "question");
  r.answer = required_string(j, "answer");
  r.answer_category = required_string(j, "answer_category");
  if (auto it = j.find("question_category"); it != j.end() && !it->is_null()) {
    r.question_category = required_string(j, "question_category");
  }
  if (j.contains("source")) r.source = required_string(j, "source");
  return r;
}

Manifest parse_manifest(std::istream& in, const std::string& origin) {
  Manifest m;
  std::unordered_set<std::string> seen;
  std::unordered_map<std::string, std::string> refs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    Record r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw ValidationError(where + "malformed JSON: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    auto [ref, inserted] = refs.emplace(r.image_id, r.image_ref);
    if (!inserted && ref->second != r.image_ref) {
      throw ValidationError(where + "image_id '" + r.image_id + "' has image_ref '" + r.image_ref +
                            "' but was earlier given '" + ref->second + "'");
    }
    if (!seen.insert(dup_key(r)).second) {
      ++m.duplicates_collapsed;
      continue;
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  return parse_manifest(in, path.string());
}

std::string dump_manifest(const Manifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) {
    out += to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << dump_manifest(manifest);
  if (!out) throw IoError("write failed for " + path.string());
}

CategorySource parse_category_source(const std::string& name) {
  if (name == "answer") return CategorySource::answer;
  if (name == "question") return CategorySource::question;
  throw ValidationError("category source must be 'answer' or 'question', got '" + name + "'");
}

const std::string& category_of(const Record& r, CategorySource source) {
  if (source == CategorySource::answer) return r.answer_category;
  if (!r.question_category) {
    throw ValidationError("record for image '" + r.image_id + "' has no question_category");
  }
  return *r.question_category;
}

bool CategoryRule::matches(const Record& r) const {
  if (!old_category.empty() && !old_category.count(r.answer_category)) return false;
  if (!answer_tokens.empty()) {
    bool any = false;
    for (const auto& tok : tokenize(r.answer)) {
      if (answer_tokens.count(tok)) {
        any = true;
        break;
      }
    }
    if (!any) return false;
  }
  return true;
}

void CategoryMap::validate() const {
  if (rules.empty() || !rules.back().unconditional()) {
    throw ValidationError("category map is not total: the last rule must match every record");
  }
  for (std::size_t i = 0; i + 1 < rules.size(); ++i) {
    if (rules[i].unconditional()) {
      throw ValidationError("category map rule " + std::to_string(i) +
                            " matches every record, so the rules after it are unreachable");
    }
  }
}

CategoryMap CategoryMap::from_json(const json& j) {
  CategoryMap map;
  try {
    const json& rules = j.is_array() ? j : j.at("rules");
    for (const auto& entry : rules) {
      CategoryRule rule;
      for (const auto& [key, value] : entry.items()) {
        if (key == "answer_tokens") {
          for (const auto& t : value) {
            for (auto& tok : tokenize(t.get<std::string>())) rule.answer_tokens.insert(tok);
          }
        } else if (key == "old_category") {
          for (const auto& c : value) rule.old_category.insert(c.get<std::string>());
        } else if (key == "category") {
          if (!value.is_null()) rule.category = value.get<std::string>();
        } else if (key != "comment") {
          throw ValidationError("category map: unknown rule key '" + key + "'");
        }
      }
      if (!entry.contains("category")) {
        throw ValidationError("category map: every rule needs a 'category' (null keeps the old one)");
      }
      map.rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed category map: ") + e.what());
  }
  map.validate();
  return map;
}

CategoryMap CategoryMap::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read category map " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError("malformed category map " + path.string() + ": " + e.what());
  }
}

CategoryMap CategoryMap::identity() {
  CategoryMap map;
  map.rules.push_back(CategoryRule{});
  return map;
}

Manifest recategorize(const Manifest& manifest, const CategoryMap& map) {
  map.validate();
  Manifest out;
  out.duplicates_collapsed = manifest.duplicates_collapsed;
  out.records.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    Record copy = r;
    for (const auto& rule : map.rules) {
      if (!rule.matches(r)) continue;
      if (rule.category) copy.answer_category = *rule.category;
      break;
    }
    out.records.push_back(std::move(copy));
  }
  return out;
}

Manifest merge_dedup(const Manifest& a, const Manifest& b, const MergeOptions& options) {
  Manifest out;
  std::unordered_map<std::string, std::string> refs;
  std::unordered_set<std::string> seen;
  for (const Manifest* m : {&a, &b}) {
    for (const auto& r : m->records) {
      Record copy = r;
      auto [ref, inserted] = refs.emplace(r.image_id, r.image_ref);
      if (!inserted && ref->second != r.image_ref) {
        if (!options.override_conflicts) {
          throw ValidationError("merge: image_id '" + r.image_id + "' refers to both '" +
                                ref->second + "' and '" + r.image_ref +
                                "' (pass the override flag to keep the first)");
        }
        copy.image_ref = ref->second;
      }
      if (!seen.insert(dup_key(copy)).second) {
        ++out.duplicates_collapsed;
        continue;
      }
      out.records.push_back(std::move(copy));
    }
  }
  return out;
}

void SplitSpec::validate() const {
  for (const auto& c : train_categories) {
    if (test_categories.count(c)) {
      throw ValidationError("split: category '" + c + "' is on both the train and test side");
    }
  }
}

SplitSpec SplitSpec::from_json(const json& j) {
  SplitSpec spec;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "train_categories") {
        spec.train_categories = value.get<std::set<std::string>>();
      } else if (key == "test_categories") {
        spec.test_categories = value.get<std::set<std::string>>();
      } else {
        throw ValidationError("split spec: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed split spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SplitSpec SplitSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read split spec " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError("malformed split spec " + path.string() + ": " + e.what());
  }
}

json SplitSpec::to_json() const {
  return {{"train_categories", train_categories}, {"test_categories", test_categories}};
}

SplitResult split(const Manifest& manifest, const SplitSpec& spec, CategorySource source) {
  spec.validate();
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> sides;
  for (const auto& r : manifest.records) {
    const auto& cat = category_of(r, source);
    const bool train = spec.train_categories.count(cat) != 0;
    if (!train && !spec.test_categories.count(cat)) {
      throw ValidationError("split: category '" + cat + "' (image '" + r.image_id +
                            "') is in neither the train nor the test set");
    }
    auto& counts = sides[r.image_id];
    (train ? counts.first : counts.second)++;
  }
  SplitResult result;
  for (const auto& r : manifest.records) {
    const bool record_train = spec.train_categories.count(category_of(r, source)) != 0;
    const auto& [n_train, n_test] = sides.at(r.image_id);
    const bool image_train = n_train >= n_test;
    if (record_train != image_train) {
      result.dropped.push_back(r);
    } else {
      (image_train ? result.train : result.test).records.push_back(r);
    }
  }
  return result;
}

json Stats::to_json() const {
  json per = json::object();
  for (const auto& [cat, s] : per_category) {
    per[cat] = {{"images", s.images}, {"questions", s.questions}};
  }
  json j = {{"per_category", per},
            {"records", records},
            {"unique_images", unique_images},
            {"unique_questions", unique_questions},
            {"unique_answers", unique_answers},
            {"unique_qa_pairs", unique_qa_pairs}};
  if (unique_answers > 0) j["variety_ratio"] = variety_ratio(*this);
  return j;
}

Stats stats(const Manifest& manifest, CategorySource source) {
  Stats s;
  std::map<std::string, std::set<std::string>> images_per_cat;
  std::set<std::string> images, questions, answers, pairs;
  for (const auto& r : manifest.records) {
    const auto& cat = category_of(r, source);
    images_per_cat[cat].insert(r.image_id);
    s.per_category[cat].questions++;
    images.insert(r.image_id);
    const auto q = join_tokens(tokenize(r.question));
    const auto a = join_tokens(tokenize(r.answer));
    questions.insert(q);
    answers.insert(a);
    pairs.insert(q + '\x1f' + a);
  }
  for (const auto& [cat, ids] : images_per_cat) s.per_category[cat].images = ids.size();
  s.records = manifest.records.size();
  s.unique_images = images.size();
  s.unique_questions = questions.size();
  s.unique_answers = answers.size();
  s.unique_qa_pairs = pairs.size();
  return s;
}

double variety_ratio(std::size_t unique_qa_pairs, std::size_t unique_answers) {
  if (unique_answers == 0) throw ValidationError("variety ratio: corpus has no answers");
  return static_cast<double>(unique_qa_pairs) / static_cast<double>(unique_answers);
}

double variety_ratio(const Stats& s) { return variety_ratio(s.unique_qa_pairs, s.unique_answers); }

std::string format_ratio(double ratio) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", ratio);
  return buf;
}

}  // namespace metaquill
