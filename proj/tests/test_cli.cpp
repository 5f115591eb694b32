// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "file_hash.hpp"
#include "json.hpp"
#include "metaquill/cli.hpp"
#include "metaquill/config.hpp"
#include "metaquill/dataset.hpp"
#include "metaquill/metrics.hpp"

using namespace metaquill;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// First JSON document printed by a command (its resolved configuration).
json echoed(const std::string& out) {
  std::istringstream in(out);
  json j;
  in >> j;
  return j;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "metaquill_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

// Toy corpus and a small run configuration, created once.
struct Fixture {
  fs::path toy, config;

  Fixture() {
    toy = scratch("toy");
    const Result r = run({"gen-toyset", "--out", toy.string(), "--seed", "3", "--categories", "4",
                          "--images-per-category", "10"});
    REQUIRE(r.code == 0);
    config = toy.parent_path() / "run_config.json";
    const json cfg = {
        {"data", {{"manifest", (toy / "manifest.jsonl").string()}, {"split", (toy / "splitspec.json").string()}}},
        {"model",
         {{"d_w", 6}, {"d_h", 8}, {"d_att", 8}, {"d_p", 8}, {"d_c", 4}, {"d_a", 4}, {"film_hidden", 6},
          {"max_len", 12}}},
        {"selfsup", {{"steps", 4}, {"batch_size", 3}}},
        {"meta",
         {{"ways", 2}, {"shots", 3}, {"queries", 2}, {"meta_batch", 2}, {"adaptation_steps", 1},
          {"max_meta_iters", 4}, {"finetune_steps", 2}}},
        {"schedule", {{"checkpoint_every", 2}, {"eval_episodes", 2}}}};
    write(config, cfg.dump(2));
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

// Checkpoint contents compared across run directories: every file except
// the manifest byte for byte, the manifest without the echoed output dir.
void check_same_checkpoint(const fs::path& a, const fs::path& b) {
  auto ha = testing::tree_hashes(a), hb = testing::tree_hashes(b);
  ha.erase("manifest.json");
  hb.erase("manifest.json");
  CHECK(ha == hb);
  auto ma = json::parse(testing::read_file(a / "manifest.json"));
  auto mb = json::parse(testing::read_file(b / "manifest.json"));
  ma["config"]["run"]["output"].erase("dir");
  mb["config"]["run"]["output"].erase("dir");
  CHECK(ma == mb);
}

std::vector<std::string> with(std::vector<std::string> base, const std::vector<std::string>& more) {
  base.insert(base.end(), more.begin(), more.end());
  return base;
}

std::vector<std::string> train_cmd(const std::string& cmd, const fs::path& out) {
  return {cmd, "--config", fixture().config.string(), "--out", out.string()};
}

}  // namespace

TEST_CASE("configuration errors exit with the validation code") {
  const fs::path bad = scratch("bad_config.json");
  write(bad, R"({"meta": {"wayz": 3}})");
  Result r = run({"meta-train", "--config", bad.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("meta.wayz") != std::string::npos);

  r = run({"meta-train", "--set", "meta.ways=\"three\""});
  CHECK(r.code == 2);
  CHECK(r.err.find("meta.ways") != std::string::npos);
  CHECK(run({"meta-train", "--set", "meta.ways=2.5"}).code == 2);
  CHECK(run({"meta-train", "--set", "nokey"}).code == 2);

  write(bad, "{not json");
  CHECK(run({"pretrain", "--config", bad.string()}).code == 2);
  CHECK(run({"pretrain", "--config", "/nonexistent/config.json"}).code == 4);
  CHECK(run({"no-such-command"}).code == 2);
  CHECK(run({"curate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("resolved configuration echoes every default") {
  const fs::path out = scratch("echo_run");
  const Result r = run({"meta-train", "--set", "meta.ways=4", "--seed", "17", "--out", out.string()});
  CHECK(r.code == 2);  // no data configured
  const json echo = echoed(r.out);
  json want = RunConfig().to_json();
  want["meta"]["ways"] = 4;
  want["seed"] = 17;
  want["output"]["dir"] = out.string();
  CHECK(echo == want);
  for (const char* section : {"data", "model", "meta", "selfsup", "metrics", "schedule", "output"}) {
    CHECK(echo.contains(section));
  }
}

TEST_CASE("thread count precedence: flag, then environment, then config") {
  const fs::path out = scratch("threads_run");
  const auto threads = [&](const std::vector<std::string>& extra) {
    return echoed(run(with({"meta-train", "--set", "threads=4", "--out", out.string()}, extra)).out)
        .at("threads")
        .get<int>();
  };
  unsetenv("METAQUILL_THREADS");
  CHECK(threads({}) == 4);
  setenv("METAQUILL_THREADS", "3", 1);
  CHECK(threads({}) == 3);
  CHECK(threads({"--threads", "2"}) == 2);
  setenv("METAQUILL_THREADS", "lots", 1);
  CHECK(run({"meta-train"}).code == 2);
  CHECK(threads({"--threads", "2"}) == 2);
  setenv("METAQUILL_THREADS", "0", 1);
  CHECK(run({"meta-train"}).code == 2);
  unsetenv("METAQUILL_THREADS");
  CHECK(run({"meta-train", "--threads", "0"}).code == 2);
}

TEST_CASE("gen-toyset output is byte-reproducible") {
  const fs::path a = scratch("toy_a"), b = scratch("toy_b");
  const std::vector<std::string> args{"gen-toyset", "--seed", "5", "--categories", "4",
                                      "--images-per-category", "3", "--out"};
  REQUIRE(run(with(args, {a.string()})).code == 0);
  REQUIRE(run(with(args, {b.string()})).code == 0);
  const auto ha = testing::tree_hashes(a);
  CHECK(ha.size() == 4 * 3 + 3);
  CHECK(ha == testing::tree_hashes(b));
  REQUIRE(run(with(args, {a.string()})).code == 0);
  CHECK(ha == testing::tree_hashes(a));
  CHECK(run({"gen-toyset", "--out", a.string(), "--categories", "9"}).code == 2);
}

TEST_CASE("curate with an identity map reproduces the manifest byte for byte") {
  const fs::path out = scratch("curate"), map = scratch("identity_map.json");
  write(map, R"({"rules": [{"category": null}]})");
  const fs::path input = fixture().toy / "manifest.jsonl";
  Result r = run({"curate", "--input", input.string(), "--category-map", map.string(), "--split",
                  (fixture().toy / "splitspec.json").string(), "--out", out.string()});
  REQUIRE(r.code == 0);
  CHECK(testing::read_file(out / "manifest.jsonl") == testing::read_file(input));
  const json report = json::parse(testing::read_file(out / "curate_report.json"));
  CHECK(report.at("records") == 40);
  CHECK(report.at("train").get<int>() + report.at("test").get<int>() + report.at("dropped").get<int>() == 40);
  CHECK(fs::exists(out / "resolved_config.json"));

  // Merging a manifest with itself collapses every record.
  r = run({"curate", "--input", input.string(), "--input", input.string(), "--out", out.string()});
  REQUIRE(r.code == 0);
  const json merged = json::parse(testing::read_file(out / "curate_report.json"));
  CHECK(merged.at("records") == 40);
  CHECK(merged.at("duplicates_collapsed") == 40);
}

TEST_CASE("stats command reports the library statistics") {
  const fs::path out = scratch("stats");
  const fs::path manifest = fixture().toy / "manifest.jsonl";
  REQUIRE(run({"stats", "--manifest", manifest.string(), "--out", out.string()}).code == 0);
  const json got = json::parse(testing::read_file(out / "stats.json"));
  CHECK(got == stats(load_manifest(manifest), CategorySource::answer).to_json());
  CHECK(run({"stats", "--manifest", "/nonexistent.jsonl"}).code == 4);
  CHECK(run({"stats", "--manifest", manifest.string(), "--category-source", "neither"}).code == 2);
}

TEST_CASE("pretrain logs strictly increasing steps and resumes bit-exactly") {
  const fs::path full = scratch("pre_full"), part = scratch("pre_part");
  REQUIRE(run(train_cmd("pretrain", full)).code == 0);
  REQUIRE(run(with(train_cmd("pretrain", part), {"--set", "selfsup.steps=2"})).code == 0);
  REQUIRE(run(with(train_cmd("pretrain", part), {"--resume"})).code == 0);

  std::istringstream log(testing::read_file(full / "log.jsonl"));
  std::string line;
  std::int64_t expect = 0;
  while (std::getline(log, line)) {
    const json row = json::parse(line);
    CHECK(row.at("iter") == expect++);
    for (const char* key : {"loss", "vqg_loss", "rot_loss", "wallclock_ms"}) CHECK(row.contains(key));
  }
  CHECK(expect == 4);
  CHECK(testing::log_without_wallclock(full / "log.jsonl") == testing::log_without_wallclock(part / "log.jsonl"));
  check_same_checkpoint(full / "checkpoint", part / "checkpoint");
  CHECK_FALSE(fs::exists(full / "checkpoint.tmp"));
}

TEST_CASE("lambda 0 and --no-selfsup train identical parameters") {
  const fs::path a = scratch("pre_lambda0"), b = scratch("pre_noss");
  REQUIRE(run(with(train_cmd("pretrain", a), {"--set", "selfsup.lambda=0"})).code == 0);
  REQUIRE(run(with(train_cmd("pretrain", b), {"--no-selfsup"})).code == 0);
  CHECK(testing::log_without_wallclock(a / "log.jsonl") == testing::log_without_wallclock(b / "log.jsonl"));
  auto ha = testing::tree_hashes(a / "checkpoint"), hb = testing::tree_hashes(b / "checkpoint");
  ha.erase("manifest.json");
  hb.erase("manifest.json");
  CHECK(ha == hb);
  CHECK_FALSE(ha.count("rotation.fc.w.tnsr"));
}

TEST_CASE("precomputed features with the rotation task enabled is rejected") {
  const fs::path out = scratch("pre_precomputed");
  const Result r = run(with(train_cmd("pretrain", out),
                            {"--set", "model.backend=precomputed", "--set", "data.features=/tmp"}));
  CHECK(r.code == 2);
  CHECK(r.err.find("tiny_cnn") != std::string::npos);
}

TEST_CASE("meta-train, resume and finetune-eval produce reproducible scores") {
  const fs::path pre = scratch("pipeline_pre"), meta = scratch("pipeline_meta"),
                 part = scratch("pipeline_part");
  REQUIRE(run(train_cmd("pretrain", pre)).code == 0);
  const std::string ckpt = (pre / "checkpoint").string();
  REQUIRE(run(with(train_cmd("meta-train", meta), {"--checkpoint", ckpt})).code == 0);
  REQUIRE(run(with(train_cmd("meta-train", part), {"--checkpoint", ckpt, "--set", "meta.max_meta_iters=2"})).code == 0);
  REQUIRE(run(with(train_cmd("meta-train", part), {"--checkpoint", ckpt, "--resume"})).code == 0);
  CHECK(testing::log_without_wallclock(meta / "log.jsonl") == testing::log_without_wallclock(part / "log.jsonl"));
  check_same_checkpoint(meta / "checkpoint", part / "checkpoint");
  // Meta-trained checkpoints carry no rotation head.
  CHECK_FALSE(fs::exists(meta / "checkpoint" / "rotation.fc.w.tnsr"));

  const std::string mckpt = (meta / "checkpoint").string();
  const fs::path e1 = scratch("eval_1"), e2 = scratch("eval_2");
  REQUIRE(run(with(train_cmd("finetune-eval", e1), {"--checkpoint", mckpt})).code == 0);
  const std::string first = testing::read_file(e1 / "scores.json");
  REQUIRE(run(with(train_cmd("finetune-eval", e1), {"--checkpoint", mckpt})).code == 0);
  CHECK(testing::read_file(e1 / "scores.json") == first);
  CHECK(testing::tree_hashes(e1).size() == 3);

  const json report = json::parse(first);
  for (const char* key : {"bleu4", "meteor_s", "rougeL", "cider", "x100"}) CHECK(report.at("scores").contains(key));
  CHECK(report.at("per_episode").size() == 2);
  CHECK(report.at("seed") == 0);
  CHECK(report.at("config").at("meta").at("ways") == 2);
  std::istringstream preds(testing::read_file(e1 / "predictions.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(preds, line)) {
    const json p = json::parse(line);
    CHECK(p.contains("candidate"));
    CHECK(p.at("references").size() == 1);
    ++n;
  }
  CHECK(n == 2 * 2 * 2);

  REQUIRE(run(with(train_cmd("finetune-eval", e2), {"--checkpoint", mckpt, "--seed", "1"})).code == 0);
  const json other = json::parse(testing::read_file(e2 / "scores.json"));
  CHECK(other.at("per_episode") != report.at("per_episode"));

  CHECK(run(train_cmd("finetune-eval", e2)).code == 2);
}

TEST_CASE("score command matches the library scorer") {
  const fs::path dir = scratch("score"), preds = scratch("preds.jsonl");
  write(preds,
        "{\"id\": \"a\", \"candidate\": \"what color is the square\", \"references\": [\"what color is the square\"]}\n"
        "{\"id\": \"b\", \"candidate\": \"how many circles\", \"references\": [\"how many circles are there\"]}\n");
  REQUIRE(run({"score", "--predictions", preds.string(), "--out", dir.string()}).code == 0);
  const json got = json::parse(testing::read_file(dir / "scores.json"));
  CHECK(got.at("scores") == score_corpus(load_predictions(preds)).to_json());
  CHECK(got.at("per_item").size() == 2);
  REQUIRE(run({"score", "--predictions", preds.string(), "--set", "metrics.rouge_beta=2", "--out", dir.string()}).code == 0);
  MetricOptions opt;
  opt.rouge_beta = 2;
  CHECK(json::parse(testing::read_file(dir / "scores.json")).at("scores") ==
        score_corpus(load_predictions(preds), opt).to_json());
  CHECK(run({"score", "--predictions", preds.string(), "--set", "metrics.cider_sigma=-1"}).code == 2);
}

TEST_CASE("non-finite training aborts with the numeric code") {
  const fs::path out = scratch("diverge");
  const Result r = run(with(train_cmd("pretrain", out), {"--set", "selfsup.lr=1e30", "--set", "selfsup.clip_norm=0"}));
  CHECK(r.code == 3);
}
