// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "metaquill/dataset.hpp"
#include "metaquill/metrics.hpp"
#include "metaquill/text.hpp"

namespace testing {

// Five scored items with one or two references each.
inline metaquill::Corpus fixture_corpus() {
  auto t = [](const char* s) { return metaquill::tokenize(s); };
  return {
      {"a", t("what color is the cat"), {t("what color is the cat"), t("what is the color of the cat")}},
      {"b", t("how many dogs are there"), {t("how many dogs are in the picture"), t("how many dogs")}},
      {"c", t("where is the red ball"), {t("what is next to the ball"), t("where is the ball")}},
      {"d", t("is the man happy"), {t("what is the man doing"), t("is the man smiling")}},
      {"e", t("what sport is being played the the"), {t("what sport is this")}},
  };
}

struct SplitFixture {
  metaquill::SplitSpec spec;
  metaquill::Manifest manifest;
};

// Up to 40 records over at most 12 images and six categories; c0 always
// trains and c5 always tests so both sides are populated.
inline SplitFixture random_split_fixture(std::mt19937& rng) {
  static const std::vector<std::string> cats = {"c0", "c1", "c2", "c3", "c4", "c5"};
  SplitFixture f;
  for (const auto& c : cats) (rng() % 2 ? f.spec.train_categories : f.spec.test_categories).insert(c);
  f.spec.train_categories.insert("c0");
  f.spec.test_categories.erase("c0");
  f.spec.test_categories.insert("c5");
  f.spec.train_categories.erase("c5");
  const int n = 1 + static_cast<int>(rng() % 40);
  const int images = 1 + static_cast<int>(rng() % 12);
  for (int i = 0; i < n; ++i) {
    metaquill::Record r;
    r.image_id = "img" + std::to_string(rng() % images);
    r.image_ref = "images/" + r.image_id + ".tnsr";
    r.question = "q" + std::to_string(i);
    r.answer = "a";
    r.answer_category = cats[rng() % cats.size()];
    f.manifest.records.push_back(std::move(r));
  }
  return f;
}

}  // namespace testing
