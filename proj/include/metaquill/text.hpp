// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace metaquill {

// Lowercases, strips punctuation other than apostrophes and splits on
// whitespace. "Is it red?" -> {"is", "it", "red"}.
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  // Reserved tokens only.
  Vocabulary();
  // Reserved tokens followed by the distinct tokens of `texts`, sorted.
  static Vocabulary build(const std::vector<std::string>& texts);
  // One token per line; line number is the id. The first four lines must be
  // the reserved tokens.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  // Unknown tokens map to <unk>.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;

  std::vector<int> encode(std::string_view text) const;
  // Stops at <eos>; skips <bos> and <pad>.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace metaquill
