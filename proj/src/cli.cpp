// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "metaquill/config.hpp"
#include "metaquill/errors.hpp"
#include "metaquill/text.hpp"
#include "metaquill/tnsr.hpp"
#include "metaquill/toyset.hpp"

namespace metaquill {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream offset keeping evaluation episodes apart from meta-training ones.
constexpr std::uint64_t kEvalStream = 1u << 20;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void echo_config(std::ostream& out, const json& resolved, const std::optional<fs::path>& dir) {
  out << resolved.dump(2) << "\n";
  if (dir) write_json(*dir / "resolved_config.json", resolved);
}

class JsonlLog {
 public:
  // Keeps the rows of an existing log whose iter is below `keep_below`.
  JsonlLog(const fs::path& path, std::int64_t keep_below) : path_(path) {
    std::string kept;
    if (keep_below > 0 && fs::exists(path)) {
      std::ifstream in(path, std::ios::binary);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.contains("iter")) {
          throw ValidationError("log " + path.string() + " has a malformed row");
        }
        if (row.at("iter").get<std::int64_t>() < keep_below) kept += line + "\n";
      }
    }
    write_text(path, kept);
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot append to " + path.string());
  }

  void write(const json& row) {
    out_ << row.dump() << "\n";
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

void save_checkpoint_atomic(const fs::path& dir, const Model& model, std::int64_t step,
                            const json& run) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  save_model(tmp, model, step, run);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

struct RunData {
  Manifest manifest;
  SplitResult split;
  std::vector<std::string> categories;
  Vocabulary vocab;
  fs::path image_root;
};

RunData load_data(const RunConfig& rc) {
  if (rc.data.manifest.empty()) throw ValidationError("config: data.manifest is required");
  if (rc.data.split.empty()) throw ValidationError("config: data.split is required");
  RunData d;
  d.manifest = load_manifest(rc.data.manifest);
  if (d.manifest.records.empty()) throw ValidationError("manifest " + rc.data.manifest + " is empty");
  const SplitSpec spec = SplitSpec::load(rc.data.split);
  d.split = split(d.manifest, spec, rc.data.category_source);
  std::set<std::string> cats(spec.train_categories.begin(), spec.train_categories.end());
  cats.insert(spec.test_categories.begin(), spec.test_categories.end());
  d.categories.assign(cats.begin(), cats.end());
  std::vector<std::string> texts;
  for (const auto& r : d.manifest.records) {
    texts.push_back(r.question);
    texts.push_back(r.answer);
  }
  d.vocab = Vocabulary::build(texts);
  d.image_root = rc.data.image_root.empty() ? fs::path(rc.data.manifest).parent_path()
                                            : fs::path(rc.data.image_root);
  return d;
}

std::vector<Example> make_examples(const Model& model, const std::vector<Record>& records,
                                   const RunConfig& rc, const fs::path& image_root) {
  std::optional<FeatureStore> store;
  if (model.config().backend == Backend::precomputed) {
    if (rc.data.features.empty()) {
      throw ValidationError("config: data.features is required for the precomputed backend");
    }
    store = FeatureStore::open(rc.data.features);
  }
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Tensor input = store ? store->load(r.image_id, model.config().features_shape())
                         : read_tnsr(image_root / r.image_ref);
    out.push_back(model.make_example(r, input));
  }
  return out;
}

Model fresh_model(const RunConfig& rc, const RunData& data) {
  Tensor table;
  if (rc.model.embedding == EmbeddingSource::pretrained) {
    if (rc.data.embedding_table.empty()) {
      throw ValidationError("config: data.embedding_table is required for pretrained embeddings");
    }
    table = read_tnsr(rc.data.embedding_table);
  }
  return Model(rc.model, data.vocab, data.categories, rc.seed, table);
}

// Starting point for a training command: the run's own checkpoint when
// resuming, else the configured initial checkpoint, else fresh parameters.
struct Start {
  Model model;
  std::int64_t step = 0;
};

Start start_model(const RunConfig& rc, const RunData& data, bool resume) {
  const fs::path own = fs::path(rc.output.dir) / "checkpoint";
  if (resume && fs::exists(own / "manifest.json")) {
    auto loaded = load_model(own);
    return {std::move(loaded.model), loaded.step};
  }
  if (!rc.output.init_checkpoint.empty()) {
    return {load_model(rc.output.init_checkpoint).model, 0};
  }
  return {fresh_model(rc, data), 0};
}

// Drops a pretext head and, when configured, freezes the CNN and swaps raw
// images for cached feature maps.
void prepare_for_adaptation(Model& model, const RunConfig& rc, std::vector<Example>& examples) {
  if (has_rotation_head(model.trainable())) {
    model.trainable() = strip_rotation_head(model.trainable());
  }
  if (model.config().backend == Backend::tiny_cnn && rc.schedule.freeze_encoder) {
    model.freeze("cnn.");
    model.precompute_features(examples);
  }
}

struct RunOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out_dir;
  std::string checkpoint;
  bool resume = false;
  bool no_selfsup = false;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config_path, "Run configuration JSON");
  cmd->add_option("--set", o.sets, "Override a config key, e.g. meta.ways=2")->take_all();
  cmd->add_option("--seed", o.seed, "Seed (overrides the config)");
  cmd->add_option("--threads", o.threads, "Worker cap (falls back to METAQUILL_THREADS)");
  cmd->add_option("--out", o.out_dir, "Output directory (overrides output.dir)");
}

RunConfig resolve_run_config(const RunOptions& o) {
  json user = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + o.config_path);
    user = json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ValidationError("config " + o.config_path + " is not valid JSON");
  }
  user = apply_overrides(user, o.sets);
  if (o.seed) user["seed"] = *o.seed;
  if (!o.out_dir.empty()) user["output"]["dir"] = o.out_dir;
  if (!o.checkpoint.empty()) user["output"]["init_checkpoint"] = o.checkpoint;
  if (o.no_selfsup) user["selfsup"]["enabled"] = false;
  if (o.threads) {
    user["threads"] = *o.threads;
  } else if (const char* env = std::getenv("METAQUILL_THREADS"); env && *env) {
    int n = 0;
    try {
      std::size_t used = 0;
      n = std::stoi(env, &used);
      if (used != std::string(env).size()) n = 0;
    } catch (const std::exception&) {
      n = 0;
    }
    if (n < 1) throw ValidationError("METAQUILL_THREADS must be a positive integer");
    user["threads"] = n;
  }
  return RunConfig::from_json(user);
}

json run_echo(const RunConfig& rc) { return rc.to_json(); }

int cmd_pretrain(const RunOptions& o, std::ostream& out) {
  const RunConfig rc = resolve_run_config(o);
  if (rc.selfsup.rotation_active() && rc.model.backend != Backend::tiny_cnn) {
    throw ValidationError(
        "pretrain: the rotation task needs the tiny_cnn encoder backend; set selfsup.lambda to 0 "
        "or pass --no-selfsup for precomputed features");
  }
  const fs::path dir = rc.output.dir;
  fs::create_directories(dir);
  echo_config(out, run_echo(rc), dir);
  const RunData data = load_data(rc);
  Start start = start_model(rc, data, o.resume);
  Model& model = start.model;
  std::vector<Example> examples = make_examples(model, data.split.train.records, rc, data.image_root);
  JsonlLog log(dir / "log.jsonl", start.step);
  double last_vqg = 0, last_rot = 0;
  std::int64_t step = start.step;
  do {
    SelfSupConfig chunk = rc.selfsup;
    chunk.steps = static_cast<int>(
        std::min<std::int64_t>(rc.selfsup.steps, step + rc.schedule.checkpoint_every));
    pretrain_joint(model, examples, chunk, step, [&](const PretrainLogRow& r) {
      log.write({{"iter", r.iter},
                 {"loss", r.loss},
                 {"vqg_loss", r.vqg_loss},
                 {"rot_loss", r.rot_loss},
                 {"wallclock_ms", r.wallclock_ms}});
      last_vqg = r.vqg_loss;
      last_rot = r.rot_loss;
    });
    step = std::max<std::int64_t>(step, chunk.steps);
    save_checkpoint_atomic(dir / "checkpoint", model, step, run_echo(rc));
  } while (step < rc.selfsup.steps);
  out << json{{"command", "pretrain"},
              {"steps", step},
              {"vqg_loss", last_vqg},
              {"rot_loss", last_rot},
              {"checkpoint", (dir / "checkpoint").string()}}
             .dump()
      << "\n";
  return kExitOk;
}

int cmd_meta_train(const RunOptions& o, std::ostream& out) {
  const RunConfig rc = resolve_run_config(o);
  const fs::path dir = rc.output.dir;
  fs::create_directories(dir);
  echo_config(out, run_echo(rc), dir);
  const RunData data = load_data(rc);
  Start start = start_model(rc, data, o.resume);
  Model& model = start.model;
  const auto& records = data.split.train.records;
  std::vector<Example> examples = make_examples(model, records, rc, data.image_root);
  prepare_for_adaptation(model, rc, examples);
  JsonlLog log(dir / "log.jsonl", start.step);
  double last = 0;
  std::int64_t iter = start.step;
  do {
    MetaConfig chunk = rc.meta;
    chunk.max_meta_iters = static_cast<int>(
        std::min<std::int64_t>(rc.meta.max_meta_iters, iter + rc.schedule.checkpoint_every));
    meta_train(model, records, examples, rc.data.category_source, chunk, iter,
               [&](const MetaLogRow& r) {
                 log.write({{"iter", r.iter},
                            {"mean_query_loss", r.mean_query_loss},
                            {"wallclock_ms", r.wallclock_ms}});
                 last = r.mean_query_loss;
               });
    iter = std::max<std::int64_t>(iter, chunk.max_meta_iters);
    save_checkpoint_atomic(dir / "checkpoint", model, iter, run_echo(rc));
  } while (iter < rc.meta.max_meta_iters);
  out << json{{"command", "meta-train"},
              {"iters", iter},
              {"mean_query_loss", last},
              {"checkpoint", (dir / "checkpoint").string()}}
             .dump()
      << "\n";
  return kExitOk;
}

json mean_scores(const std::vector<Scores>& all) {
  Scores m;
  for (const auto& s : all) {
    m.bleu4 += s.bleu4;
    m.meteor_s += s.meteor_s;
    m.rougeL += s.rougeL;
    m.cider += s.cider;
  }
  const double n = static_cast<double>(all.size());
  m.bleu4 /= n;
  m.meteor_s /= n;
  m.rougeL /= n;
  m.cider /= n;
  return m.to_json();
}

int cmd_finetune_eval(const RunOptions& o, std::ostream& out) {
  const RunConfig rc = resolve_run_config(o);
  if (rc.output.init_checkpoint.empty()) {
    throw ValidationError("finetune-eval needs a checkpoint (--checkpoint or output.init_checkpoint)");
  }
  const fs::path dir = rc.output.dir;
  fs::create_directories(dir);
  const json echo = run_echo(rc);
  echo_config(out, echo, dir);
  const RunData data = load_data(rc);
  Model model = load_model(rc.output.init_checkpoint).model;
  const auto& records = data.split.test.records;
  std::vector<Example> examples = make_examples(model, records, rc, data.image_root);
  prepare_for_adaptation(model, rc, examples);

  std::vector<Scores> scores;
  json episodes = json::array();
  std::string predictions;
  for (int e = 0; e < rc.schedule.eval_episodes; ++e) {
    auto rng = iteration_rng(rc.seed, e, kEvalStream);
    const Episode ep = sample_episode(records, rc.data.category_source, rc.meta, rng);
    std::vector<const Example*> support, query;
    for (auto i : ep.support) support.push_back(&examples[i]);
    for (auto i : ep.query) query.push_back(&examples[i]);
    const FinetuneResult res = finetune_and_eval(model, model.trainable(), support, query,
                                                 rc.meta.finetune_steps, rc.meta.inner_lr,
                                                 rc.metrics);
    scores.push_back(res.scores);
    episodes.push_back({{"episode", e}, {"categories", ep.categories}, {"scores", res.scores.to_json()}});
    for (const auto& item : res.corpus) {
      json refs = json::array();
      for (const auto& r : item.references) refs.push_back(join_tokens(r));
      predictions += json{{"episode", e},
                          {"id", item.id},
                          {"candidate", join_tokens(item.candidate)},
                          {"references", refs}}
                         .dump() +
                     "\n";
    }
  }
  const json report = {{"scores", mean_scores(scores)},
                       {"per_episode", episodes},
                       {"seed", rc.seed},
                       {"config", echo}};
  write_json(dir / "scores.json", report);
  write_text(dir / "predictions.jsonl", predictions);
  out << report.at("scores").dump() << "\n";
  return kExitOk;
}

int cmd_score(const std::string& predictions, const RunOptions& o, std::ostream& out) {
  json user = json::object();
  if (!o.config_path.empty()) user = RunConfig::load(o.config_path).to_json();
  user = apply_overrides(user, o.sets);
  const RunConfig rc = RunConfig::from_json(user);
  const json echo = {{"predictions", predictions}, {"metrics", rc.metrics.to_json()}};
  const std::optional<fs::path> dir =
      o.out_dir.empty() ? std::nullopt : std::optional<fs::path>(o.out_dir);
  echo_config(out, echo, dir);
  const Corpus corpus = load_predictions(predictions);
  const Scores s = score_corpus(corpus, rc.metrics);
  const json report = {{"scores", s.to_json()},
                       {"per_item", per_item_scores(corpus, rc.metrics)},
                       {"config", echo}};
  if (dir) write_json(*dir / "scores.json", report);
  out << report.at("scores").dump() << "\n";
  return kExitOk;
}

struct CurateOptions {
  std::vector<std::string> inputs;
  std::string category_map;
  std::string split_spec;
  std::string category_source = "answer";
  bool override_conflicts = false;
  std::string out_dir;
};

int cmd_curate(const CurateOptions& o, std::ostream& out) {
  const json echo = {{"inputs", o.inputs},
                     {"category_map", o.category_map},
                     {"split", o.split_spec},
                     {"category_source", o.category_source},
                     {"override_conflicts", o.override_conflicts},
                     {"out", o.out_dir}};
  const CategorySource source = parse_category_source(o.category_source);
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  echo_config(out, echo, dir);
  Manifest m = load_manifest(o.inputs.at(0));
  for (std::size_t i = 1; i < o.inputs.size(); ++i) {
    m = merge_dedup(m, load_manifest(o.inputs[i]), MergeOptions{o.override_conflicts});
  }
  if (!o.category_map.empty()) m = recategorize(m, CategoryMap::load(o.category_map));
  save_manifest(dir / "manifest.jsonl", m);
  json report = {{"records", m.records.size()}, {"duplicates_collapsed", m.duplicates_collapsed}};
  if (!o.split_spec.empty()) {
    const SplitResult s = split(m, SplitSpec::load(o.split_spec), source);
    save_manifest(dir / "train.jsonl", s.train);
    save_manifest(dir / "test.jsonl", s.test);
    report["train"] = s.train.records.size();
    report["test"] = s.test.records.size();
    report["dropped"] = s.dropped.size();
  }
  write_json(dir / "curate_report.json", report);
  out << report.dump() << "\n";
  return kExitOk;
}

int cmd_stats(const std::string& manifest, const std::string& source, const std::string& out_dir,
              std::ostream& out) {
  const json echo = {{"manifest", manifest}, {"category_source", source}, {"out", out_dir}};
  const std::optional<fs::path> dir =
      out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir);
  if (dir) fs::create_directories(*dir);
  echo_config(out, echo, dir);
  const Stats st = stats(load_manifest(manifest), parse_category_source(source));
  const json j = st.to_json();
  if (dir) write_json(*dir / "stats.json", j);
  out << j.dump() << "\n";
  return kExitOk;
}

int cmd_gen_toyset(const ToySpec& spec, const std::string& out_dir, std::ostream& out) {
  out << json{{"out", out_dir},
              {"seed", spec.seed},
              {"categories", spec.n_categories},
              {"images_per_category", spec.images_per_cat},
              {"grid", spec.grid}}
             .dump(2)
      << "\n";
  const Manifest m = generate_toyset(spec, out_dir);
  const CheckReport check = check_toyset(out_dir);
  out << json{{"records", m.records.size()}, {"checked", check.checked}, {"passed", check.passed}}.dump()
      << "\n";
  if (check.passed != check.checked) {
    for (const auto& f : check.failures) out << "check failed: " << f << "\n";
    throw ValidationError("toy set checker rejected " +
                          std::to_string(check.checked - check.passed) + " items");
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"metaquill: few-shot conditional question generation"};
  app.require_subcommand(1);

  CurateOptions curate;
  auto* c_curate = app.add_subcommand("curate", "Merge, recategorise and split manifests");
  c_curate->add_option("--input", curate.inputs, "Manifest JSONL (repeatable)")->required();
  c_curate->add_option("--category-map", curate.category_map, "Category rewrite rules JSON");
  c_curate->add_option("--split", curate.split_spec, "Train/test category spec JSON");
  c_curate->add_option("--category-source", curate.category_source, "answer or question");
  c_curate->add_flag("--override-conflicts", curate.override_conflicts,
                     "Keep the first image_ref when sources disagree");
  c_curate->add_option("--out", curate.out_dir, "Output directory")->required();

  std::string stats_manifest, stats_source = "answer", stats_out;
  auto* c_stats = app.add_subcommand("stats", "Corpus statistics");
  c_stats->add_option("--manifest", stats_manifest, "Manifest JSONL")->required();
  c_stats->add_option("--category-source", stats_source, "answer or question");
  c_stats->add_option("--out", stats_out, "Directory for stats.json");

  ToySpec toy;
  std::string toy_out;
  auto* c_toy = app.add_subcommand("gen-toyset", "Render the synthetic shapes corpus");
  c_toy->add_option("--out", toy_out, "Output directory")->required();
  c_toy->add_option("--seed", toy.seed, "Seed");
  c_toy->add_option("--categories", toy.n_categories, "Number of question families (4-8)");
  c_toy->add_option("--images-per-category", toy.images_per_cat, "Images per family");
  c_toy->add_option("--grid", toy.grid, "Image side in pixels");

  RunOptions pre, meta, ft, sc;
  auto* c_pre = app.add_subcommand("pretrain", "Supervised plus rotation pretraining");
  add_run_options(c_pre, pre);
  c_pre->add_flag("--resume", pre.resume, "Continue from the run's checkpoint");
  c_pre->add_flag("--no-selfsup", pre.no_selfsup, "Disable the rotation task");
  c_pre->add_option("--checkpoint", pre.checkpoint, "Initial checkpoint");

  auto* c_meta = app.add_subcommand("meta-train", "Episodic meta-training");
  add_run_options(c_meta, meta);
  c_meta->add_flag("--resume", meta.resume, "Continue from the run's checkpoint");
  c_meta->add_option("--checkpoint", meta.checkpoint, "Initial checkpoint");

  auto* c_ft = app.add_subcommand("finetune-eval", "Fine-tune on held-out episodes and score");
  add_run_options(c_ft, ft);
  c_ft->add_option("--checkpoint", ft.checkpoint, "Checkpoint to evaluate");

  std::string predictions;
  auto* c_score = app.add_subcommand("score", "Score a predictions JSONL");
  c_score->add_option("--predictions", predictions, "JSONL of {id, candidate, references}")
      ->required();
  c_score->add_option("--config", sc.config_path, "Run configuration JSON (metrics section)");
  c_score->add_option("--set", sc.sets, "Override a config key")->take_all();
  c_score->add_option("--out", sc.out_dir, "Directory for scores.json");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return kExitValidation;
  }

  try {
    if (c_curate->parsed()) return cmd_curate(curate, out);
    if (c_stats->parsed()) return cmd_stats(stats_manifest, stats_source, stats_out, out);
    if (c_toy->parsed()) return cmd_gen_toyset(toy, toy_out, out);
    if (c_pre->parsed()) return cmd_pretrain(pre, out);
    if (c_meta->parsed()) return cmd_meta_train(meta, out);
    if (c_ft->parsed()) return cmd_finetune_eval(ft, out);
    if (c_score->parsed()) return cmd_score(predictions, sc, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace metaquill
