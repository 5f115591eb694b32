// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "metaquill/cli.hpp"

using namespace metaquill;
namespace fs = std::filesystem;

namespace {

int run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) MESSAGE(err.str());
  return code;
}

}  // namespace

TEST_CASE("default 3-way 10-shot meta-training and evaluation fit in ten minutes") {
  const fs::path root = fs::temp_directory_path() / "metaquill_budget";
  fs::remove_all(root);
  REQUIRE(run({"gen-toyset", "--out", (root / "toy").string(), "--seed", "0", "--categories", "6",
               "--images-per-category", "40"}) == 0);
  const nlohmann::json cfg = {{"data",
                               {{"manifest", (root / "toy" / "manifest.jsonl").string()},
                                {"split", (root / "toy" / "splitspec.json").string()}}},
                              {"meta", {{"ways", 3}, {"shots", 10}}}};
  std::ofstream(root / "config.json") << cfg.dump(2);

  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE(run({"meta-train", "--config", (root / "config.json").string(), "--out", (root / "meta").string()}) == 0);
  REQUIRE(run({"finetune-eval", "--config", (root / "config.json").string(), "--out", (root / "eval").string(),
               "--checkpoint", (root / "meta" / "checkpoint").string()}) == 0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("meta-train + finetune-eval took " << seconds << " s");
  CHECK(seconds < 600.0);
  fs::remove_all(root);
}
