#include "evomerge/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "evomerge/checkpoint.hpp"
#include "evomerge/csv.hpp"
#include "evomerge/dfs.hpp"
#include "evomerge/manifest.hpp"
#include "evomerge/merge.hpp"
#include "evomerge/ps_search.hpp"
#include "evomerge/toy/train.hpp"

namespace evomerge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::string out_dir = ".";
  uint64_t seed = 1;
  bool seed_given = false;
  int threads = 1;
};

json load_config(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  std::ifstream is(g.config_path);
  if (!is) throw std::runtime_error("cannot open config: " + g.config_path);
  return json::parse(is);
}

std::string config_bytes(const Globals& g) {
  if (g.config_path.empty()) return "";
  std::ifstream is(g.config_path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

uint64_t resolve_seed(const Globals& g, const json& cfg) {
  if (g.seed_given) return g.seed;
  if (cfg.contains("seed")) return cfg["seed"].get<uint64_t>();
  return g.seed;
}

toy::BenchConfig bench_from_json(const json& j, uint64_t seed) {
  toy::BenchConfig cfg;
  cfg.task_seed = seed;
  cfg.train_seed = seed;
  if (!j.is_object()) return cfg;
  cfg.modulus = j.value("modulus", cfg.modulus);
  cfg.operand_range = j.value("operand_range", cfg.operand_range);
  cfg.train_size = j.value("train_size", cfg.train_size);
  cfg.val_size = j.value("val_size", cfg.val_size);
  cfg.test_size = j.value("test_size", cfg.test_size);
  cfg.task_seed = j.value("task_seed", cfg.task_seed);
  cfg.train_seed = j.value("train_seed", cfg.train_seed);
  cfg.base_lr = j.value("base_lr", cfg.base_lr);
  cfg.dialect_lr = j.value("dialect_lr", cfg.dialect_lr);
  cfg.math1_lr = j.value("math1_lr", cfg.math1_lr);
  cfg.math2_lr = j.value("math2_lr", cfg.math2_lr);
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  if (j.contains("dims")) {
    const auto& d = j["dims"];
    cfg.dims.seq_len = d.value("seq_len", cfg.dims.seq_len);
    cfg.dims.embed = d.value("embed", cfg.dims.embed);
    cfg.dims.hidden = d.value("hidden", cfg.dims.hidden);
    cfg.dims.blocks = d.value("blocks", cfg.dims.blocks);
    cfg.dims.slots = d.value("slots", cfg.dims.slots);
  }
  return cfg;
}

json bench_to_json(const toy::BenchConfig& cfg) {
  json j;
  j["modulus"] = cfg.modulus;
  j["operand_range"] = cfg.operand_range;
  j["train_size"] = cfg.train_size;
  j["val_size"] = cfg.val_size;
  j["test_size"] = cfg.test_size;
  j["task_seed"] = cfg.task_seed;
  j["train_seed"] = cfg.train_seed;
  j["base_lr"] = cfg.base_lr;
  j["dialect_lr"] = cfg.dialect_lr;
  j["math1_lr"] = cfg.math1_lr;
  j["math2_lr"] = cfg.math2_lr;
  j["max_epochs"] = cfg.max_epochs;
  j["dims"] = {{"seq_len", cfg.dims.seq_len}, {"embed", cfg.dims.embed},
               {"hidden", cfg.dims.hidden},   {"blocks", cfg.dims.blocks},
               {"slots", cfg.dims.slots}};
  return j;
}

PsConfig ps_from_json(const json& j, uint64_t seed, int threads) {
  PsConfig cfg;
  cfg.seed = seed;
  cfg.n_threads = threads;
  if (!j.is_object()) return cfg;
  cfg.budget = j.value("budget", cfg.budget);
  cfg.population = j.value("population", cfg.population);
  cfg.normalize = j.value("normalize", cfg.normalize);
  cfg.fixed_drop = j.value("fixed_drop", cfg.fixed_drop);
  if (j.value("scheme", "whole-model") == std::string("per-layer")) {
    cfg.scheme = LayerGrouping::PerLayer;
  }
  if (j.value("drop_mode", "fixed") == std::string("searched")) {
    cfg.drop_mode = DropMode::Searched;
  }
  return cfg;
}

DfsConfig dfs_from_json(const json& j, uint64_t seed, int threads) {
  DfsConfig cfg;
  cfg.seed = seed;
  cfg.n_threads = threads;
  if (!j.is_object()) return cfg;
  cfg.generations = j.value("generations", cfg.generations);
  cfg.population = j.value("population", cfg.population);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  if (j.value("mode", "matrix") == std::string("hypernet")) cfg.mode = ScaleMode::Hypernet;
  return cfg;
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write: " + path);
  os << j.dump(2) << "\n";
}

void write_verdict_sheet(const toy::EvalResult& res, toy::Split split,
                         const std::string& path) {
  CsvWriter csv(path, {"problem_id", "split", "value_correct", "in_dialect", "correct"});
  for (const auto& row : res.rows) {
    csv.write_row({std::to_string(row.problem_id), toy::to_string(split),
                   row.value_correct ? "1" : "0", row.in_dialect ? "1" : "0",
                   row.correct ? "1" : "0"});
  }
}

void write_trial_log(const std::vector<TrialRecord>& log, int dim, const std::string& path) {
  std::vector<std::string> header{"trial"};
  for (int i = 0; i < dim; ++i) header.push_back("g" + std::to_string(i));
  header.push_back("fitness");
  header.push_back("wall_ms");
  CsvWriter csv(path, header);
  for (const auto& rec : log) {
    std::vector<std::string> row{std::to_string(rec.trial)};
    for (double g : rec.genotype) row.push_back(csv_num(g));
    row.push_back(csv_num(rec.fitness));
    row.push_back(csv_num(rec.wall_ms));
    csv.write_row(row);
  }
}

void write_fitness_curve(const std::vector<TrialRecord>& log, const std::string& path) {
  CsvWriter csv(path, {"trial", "best_so_far"});
  double best = -1.0;
  for (const auto& rec : log) {
    if (std::isfinite(rec.fitness) && rec.fitness > best) best = rec.fitness;
    csv.write_row({std::to_string(rec.trial), csv_num(best)});
  }
}

void write_dfs_curve(const std::vector<DfsGenRecord>& log, const std::string& path) {
  CsvWriter csv(path, {"generation", "train_best", "val_of_best", "val_best_so_far",
                       "degenerate"});
  for (const auto& rec : log) {
    csv.write_row({std::to_string(rec.generation), csv_num(rec.train_best),
                   csv_num(rec.val_of_best), csv_num(rec.val_best_so_far),
                   std::to_string(rec.degenerate)});
  }
}

void write_path_report(const std::vector<PathReportRow>& rows, const std::string& path) {
  CsvWriter csv(path, {"step", "model", "layer", "scale"});
  for (const auto& r : rows) {
    csv.write_row({std::to_string(r.step), std::to_string(r.model), std::to_string(r.layer),
                   csv_num(r.scale)});
  }
}

json recipe_to_json(const MergeRecipe& r, const std::vector<std::string>& names) {
  json j;
  j["n_models"] = r.n_models;
  j["n_groups"] = r.n_groups;
  j["normalize"] = r.normalize;
  j["density"] = r.density;
  j["weight"] = r.weight;
  j["drop"] = r.drop;
  j["model_names"] = names;
  return j;
}

struct SourceFiles {
  toy::BenchConfig bench;
  LayeredModel base, dialect, math1, math2;
  std::string dir;
};

SourceFiles load_sources(const std::string& dir) {
  SourceFiles s;
  s.dir = dir;
  std::ifstream is(join(dir, "bench.json"));
  if (!is) throw std::runtime_error("missing bench.json in sources dir: " + dir);
  const json j = json::parse(is);
  s.bench = bench_from_json(j, j.value("task_seed", uint64_t{1}));
  s.base = load_checkpoint(join(dir, "base.evmg"));
  s.dialect = load_checkpoint(join(dir, "dialect.evmg"));
  s.math1 = load_checkpoint(join(dir, "math1.evmg"));
  s.math2 = load_checkpoint(join(dir, "math2.evmg"));
  return s;
}

const LayeredModel& source_by_name(const SourceFiles& s, const std::string& name) {
  if (name == "base") return s.base;
  if (name == "dialect") return s.dialect;
  if (name == "math1") return s.math1;
  if (name == "math2") return s.math2;
  throw std::runtime_error("unknown source model name: " + name);
}

RunManifest begin_manifest(const std::string& command, const Globals& g, uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config_path = g.config_path;
  m.seed = seed;
  m.out_dir = g.out_dir;
  m.started_at = timestamp_utc();
  m.run_key = bytes_hash_hex(command + "\x1f" + config_bytes(g) + "\x1f" +
                             std::to_string(seed));
  return m;
}

void finish_manifest(RunManifest& m, const std::string& out_dir) {
  m.finished_at = timestamp_utc();
  write_manifest(m, join(out_dir, "manifest.json"));
}

// ---------------------------------------------------------------------------
// train-sources

int cmd_train_sources(const Globals& g) {
  const json cfg = load_config(g);
  const uint64_t seed = resolve_seed(g, cfg);
  const toy::BenchConfig bench = bench_from_json(cfg.value("bench", json::object()), seed);
  ensure_dir(g.out_dir);
  RunManifest man = begin_manifest("train-sources", g, seed);

  const struct {
    const char* name;
    toy::Curriculum curriculum;
  } plan[] = {{"base", toy::Curriculum::BasePretrain},
              {"dialect", toy::Curriculum::Dialect},
              {"math1", toy::Curriculum::Math1},
              {"math2", toy::Curriculum::Math2}};

  LayeredModel base;
  for (const auto& item : plan) {
    toy::TrainTrace trace;
    LayeredModel model;
    try {
      model = train_source(bench, item.curriculum,
                           item.curriculum == toy::Curriculum::BasePretrain ? nullptr : &base,
                           &trace);
    } catch (const std::exception& e) {
      const std::string trace_path = join(g.out_dir, std::string(item.name) + "_trace.csv");
      CsvWriter csv(trace_path, {"epoch", "loss", "accuracy"});
      for (size_t i = 0; i < trace.epoch_loss.size(); ++i) {
        csv.write_row({std::to_string(i), csv_num(trace.epoch_loss[i]),
                       csv_num(trace.epoch_accuracy[i])});
      }
      std::cerr << "error: " << e.what() << "\n  loss trace: " << trace_path << "\n";
      return 2;
    }
    const std::string path = join(g.out_dir, std::string(item.name) + ".evmg");
    save_checkpoint(model, path);
    man.outputs[std::string(item.name) + ".evmg"] = file_hash_hex(path);
    std::cout << item.name << ": trained " << trace.epoch_loss.size() << " epochs, final acc "
              << (trace.epoch_accuracy.empty() ? 0.0 : trace.epoch_accuracy.back()) << "\n";
    if (item.curriculum == toy::Curriculum::BasePretrain) base = model;
  }

  const json bj = bench_to_json(bench);
  write_json_file(bj, join(g.out_dir, "bench.json"));
  man.outputs["bench.json"] = file_hash_hex(join(g.out_dir, "bench.json"));
  finish_manifest(man, g.out_dir);
  return 0;
}

// ---------------------------------------------------------------------------
// merge

int cmd_merge(const Globals& g) {
  const json cfg = load_config(g);
  const uint64_t seed = resolve_seed(g, cfg);
  const json mc = cfg.value("merge", json::object());
  const std::string sources_dir = cfg.value("sources_dir", std::string("."));
  const SourceFiles src = load_sources(sources_dir);
  ensure_dir(g.out_dir);
  RunManifest man = begin_manifest("merge", g, seed);
  for (const char* n : {"base.evmg", "dialect.evmg", "math1.evmg", "math2.evmg"}) {
    man.inputs[n] = file_hash_hex(join(sources_dir, n));
  }

  const std::string method = mc.value("method", std::string("dare-ties"));
  std::vector<std::string> names =
      mc.value("models", std::vector<std::string>{"dialect", "math1", "math2"});
  std::vector<LayeredModel> models;
  for (const auto& n : names) models.push_back(source_by_name(src, n));

  LayeredModel merged;
  if (method == "linear" || method == "slerp") {
    if (models.size() != 2) throw std::runtime_error(method + " takes exactly two models");
    const double lambda = mc.value("lambda", 0.5);
    merged = method == "linear" ? linear_merge(models[0], models[1], lambda)
                                : slerp_merge(models[0], models[1], lambda);
  } else if (method == "task-arithmetic") {
    std::vector<double> scales = mc.value("scales", std::vector<double>(models.size(), 1.0));
    std::vector<TaskVector> taus;
    for (const auto& m : models) taus.push_back(task_vector(m, src.base));
    std::vector<std::pair<double, const TaskVector*>> pairs;
    for (size_t k = 0; k < taus.size(); ++k) pairs.emplace_back(scales.at(k), &taus[k]);
    merged = apply_task_vectors(src.base, pairs);
  } else if (method == "ties" || method == "dare-ties" || method == "dare-linear") {
    std::vector<double> scales = mc.value("scales", std::vector<double>(models.size(), 0.4));
    TiesConfig tc;
    tc.density = mc.value("density", 0.6);
    const double drop = mc.value("drop", 0.5);
    if (method == "ties") {
      merged = ties_merge(src.base, models, tc, scales);
    } else if (method == "dare-ties") {
      merged = dare_ties_merge(src.base, models, tc, drop, seed, scales);
    } else {
      merged = dare_linear_merge(src.base, models, drop, seed, scales);
    }
  } else if (method == "frankenmerge") {
    std::vector<LayerSlice> slices;
    if (mc.contains("slices")) {
      for (const auto& s : mc["slices"]) {
        slices.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()});
      }
    } else {
      slices.push_back({0, 0, static_cast<int>(models.at(0).meta.n_blocks)});
    }
    merged = frankenmerge(models, slices);
  } else {
    std::cerr << "error: unknown merge method: " << method << "\n";
    return 1;
  }

  const std::string out_path = join(g.out_dir, "merged.evmg");
  save_checkpoint(merged, out_path);
  man.outputs["merged.evmg"] = file_hash_hex(out_path);

  const std::string task_name = mc.value("eval_task", std::string("combined"));
  const std::string split_name = mc.value("eval_split", std::string("test"));
  const toy::TaskSpec spec = spec_for(src.bench, toy::task_id_from_string(task_name));
  toy::Evaluator eval(toy::gen_task(spec));
  toy::Split split = split_name == "train"
                         ? toy::Split::Train
                         : (split_name == "validation" ? toy::Split::Validation
                                                       : toy::Split::Test);
  if (split_name != "train" && split_name != "validation" && split_name != "test") {
    std::cerr << "error: unknown split: " << split_name << "\n";
    return 1;
  }
  toy::ModelScorer scorer(merged);
  const auto res = eval.evaluate(scorer, split);
  write_verdict_sheet(res, split, join(g.out_dir, "eval.csv"));
  man.outputs["eval.csv"] = file_hash_hex(join(g.out_dir, "eval.csv"));
  std::cout << "merged (" << method << ") " << task_name << "/" << split_name
            << " accuracy: " << res.accuracy << "\n";
  finish_manifest(man, g.out_dir);
  return 0;
}

// ---------------------------------------------------------------------------
// evolve

struct EvolveOutputs {
  double test_accuracy = -1.0;
};

int run_evolve_ps(const Globals& g, const SourceFiles& src, const json& cfg, uint64_t seed,
                  RunManifest& man, const std::string& out_dir, EvolveOutputs* out,
                  LayeredModel* best_out) {
  const PsConfig ps = ps_from_json(cfg.value("ps", json::object()), seed, g.threads);
  const toy::TaskSpec spec = spec_for(src.bench, toy::TaskId::Combined);
  toy::Evaluator eval(toy::gen_task(spec));

  const std::vector<std::string> names{"dialect", "math1", "math2"};
  const std::vector<LayeredModel> models{src.dialect, src.math1, src.math2};
  const PsResult res = evolve_ps(src.base, models, eval, ps);

  if (eval.read_count(toy::Split::Test) != 0) {
    throw std::runtime_error("test split was read during PS search");
  }
  man.split_reads["search_train"] = eval.read_count(toy::Split::Train);
  man.split_reads["search_validation"] = eval.read_count(toy::Split::Validation);
  man.split_reads["search_test"] = 0;

  ensure_dir(out_dir);
  save_checkpoint(res.best_model, join(out_dir, "best.evmg"));
  write_trial_log(res.log, static_cast<int>(res.best_genotype.size()),
                  join(out_dir, "trial_log.csv"));
  write_fitness_curve(res.log, join(out_dir, "fitness_curve.csv"));
  write_json_file(recipe_to_json(res.best_recipe, names), join(out_dir, "best_recipe.json"));

  toy::ModelScorer scorer(res.best_model);
  const auto sheet = eval.evaluate(scorer, toy::Split::Test);  // the single test read
  write_verdict_sheet(sheet, toy::Split::Test, join(out_dir, "answer_sheet.csv"));
  if (out) out->test_accuracy = sheet.accuracy;
  if (best_out) *best_out = res.best_model;

  const std::string rel = out_dir == g.out_dir ? "" : "ps/";
  man.outputs[rel + "best.evmg"] = file_hash_hex(join(out_dir, "best.evmg"));
  man.outputs[rel + "fitness_curve.csv"] = file_hash_hex(join(out_dir, "fitness_curve.csv"));
  man.outputs[rel + "best_recipe.json"] = file_hash_hex(join(out_dir, "best_recipe.json"));
  man.outputs[rel + "answer_sheet.csv"] = file_hash_hex(join(out_dir, "answer_sheet.csv"));
  man.volatile_outputs[rel + "trial_log.csv"] = file_hash_hex(join(out_dir, "trial_log.csv"));
  std::cout << "ps: best train fitness " << res.best_fitness << " (trial " << res.best_trial
            << "), test accuracy " << sheet.accuracy << "\n";
  return 0;
}

void write_dfs_outputs(const Globals& g, const LayerPool& pool, const DfsResult& res,
                       const toy::Evaluator& eval, RunManifest& man,
                       const std::string& out_dir, const std::string& rel,
                       EvolveOutputs* out) {
  ensure_dir(out_dir);
  write_dfs_curve(res.log, join(out_dir, "fitness_curve.csv"));
  write_path_report(analyze_path(res.best_path, pool, res.best_scales),
                    join(out_dir, "path_report.csv"));

  // Ablation variant: the same path with all scales forced to one,
  // re-evaluated on the validation split.
  PathScorer evolved(pool, res.best_path, res.best_scales);
  PathScorer ablated(pool, res.best_path, ablate_scales(pool));
  const double ablated_val = eval.accuracy(ablated, toy::Split::Validation);
  json meta;
  meta["best_generation"] = res.best_generation;
  meta["val_accuracy"] = res.best_val_accuracy;
  meta["val_accuracy_w_ablated"] = ablated_val;
  meta["path_length"] = res.best_path.size();
  meta["pool_models"] = pool.models.size();
  meta["r"] = pool.r;

  const auto sheet = eval.evaluate(evolved, toy::Split::Test);  // single final test read
  write_verdict_sheet(sheet, toy::Split::Test, join(out_dir, "answer_sheet.csv"));
  meta["test_accuracy"] = sheet.accuracy;
  write_json_file(meta, join(out_dir, "dfs_result.json"));
  if (out) out->test_accuracy = sheet.accuracy;

  man.outputs[rel + "fitness_curve.csv"] = file_hash_hex(join(out_dir, "fitness_curve.csv"));
  man.outputs[rel + "path_report.csv"] = file_hash_hex(join(out_dir, "path_report.csv"));
  man.outputs[rel + "answer_sheet.csv"] = file_hash_hex(join(out_dir, "answer_sheet.csv"));
  man.outputs[rel + "dfs_result.json"] = file_hash_hex(join(out_dir, "dfs_result.json"));
  std::cout << "dfs: best validation accuracy " << res.best_val_accuracy
            << " (generation " << res.best_generation << "), test accuracy "
            << sheet.accuracy << ", W-ablated validation " << ablated_val << "\n";
}

int cmd_evolve(const Globals& g, const std::string& mode) {
  const json cfg = load_config(g);
  const uint64_t seed = resolve_seed(g, cfg);
  const std::string sources_dir = cfg.value("sources_dir", std::string("."));
  const SourceFiles src = load_sources(sources_dir);
  ensure_dir(g.out_dir);
  RunManifest man = begin_manifest("evolve --mode " + mode, g, seed);
  for (const char* n : {"base.evmg", "dialect.evmg", "math1.evmg", "math2.evmg"}) {
    man.inputs[n] = file_hash_hex(join(sources_dir, n));
  }

  if (mode == "ps") {
    EvolveOutputs out;
    run_evolve_ps(g, src, cfg, seed, man, g.out_dir, &out, nullptr);
    finish_manifest(man, g.out_dir);
    return 0;
  }

  if (mode == "dfs") {
    const json dj = cfg.value("dfs", json::object());
    DfsConfig dfs = dfs_from_json(dj, seed, g.threads);
    const std::string name_a = dj.value("model_a", std::string("math1"));
    const std::string name_b = dj.value("model_b", std::string("dialect"));
    const int r = dj.value("r", 2);
    LayerPool pool = build_pool({source_by_name(src, name_a), source_by_name(src, name_b)}, r);

    const toy::TaskSpec spec = spec_for(src.bench, toy::TaskId::Combined);
    toy::Evaluator eval(toy::gen_task(spec));
    const DfsResult res = evolve_dfs(pool, eval, dfs);
    if (eval.read_count(toy::Split::Test) != 0) {
      throw std::runtime_error("test split was read during DFS search");
    }
    man.split_reads["search_train"] = eval.read_count(toy::Split::Train);
    man.split_reads["search_validation"] = eval.read_count(toy::Split::Validation);
    man.split_reads["search_test"] = 0;
    EvolveOutputs out;
    write_dfs_outputs(g, pool, res, eval, man, g.out_dir, "", &out);
    finish_manifest(man, g.out_dir);
    return 0;
  }

  if (mode == "hybrid") {
    HybridConfig hc;
    hc.ps = ps_from_json(cfg.value("ps", json::object()), seed, g.threads);
    hc.dfs = dfs_from_json(cfg.value("dfs", json::object()), seed, g.threads);
    hc.pool_r = cfg.value("dfs", json::object()).value("r", 2);
    const std::string partner =
        cfg.value("dfs", json::object()).value("model_b", std::string("dialect"));
    const std::vector<std::string> names{"dialect", "math1", "math2"};
    hc.dfs_partner =
        static_cast<int>(std::find(names.begin(), names.end(), partner) - names.begin());
    if (hc.dfs_partner >= static_cast<int>(names.size())) {
      std::cerr << "error: unknown dfs partner: " << partner << "\n";
      return 1;
    }

    const toy::TaskSpec spec = spec_for(src.bench, toy::TaskId::Combined);
    toy::Evaluator eval(toy::gen_task(spec));
    const std::vector<LayeredModel> models{src.dialect, src.math1, src.math2};
    const HybridResult res = evolve_hybrid(src.base, models, eval, hc);
    if (eval.read_count(toy::Split::Test) != 0) {
      throw std::runtime_error("test split was read during hybrid search");
    }
    man.split_reads["search_train"] = eval.read_count(toy::Split::Train);
    man.split_reads["search_validation"] = eval.read_count(toy::Split::Validation);
    man.split_reads["search_test"] = 0;

    // PS sub-run outputs.
    const std::string ps_dir = join(g.out_dir, "ps");
    ensure_dir(ps_dir);
    save_checkpoint(res.ps.best_model, join(ps_dir, "best.evmg"));
    write_trial_log(res.ps.log, static_cast<int>(res.ps.best_genotype.size()),
                    join(ps_dir, "trial_log.csv"));
    write_fitness_curve(res.ps.log, join(ps_dir, "fitness_curve.csv"));
    write_json_file(recipe_to_json(res.ps.best_recipe, names),
                    join(ps_dir, "best_recipe.json"));
    man.outputs["ps/best.evmg"] = file_hash_hex(join(ps_dir, "best.evmg"));
    man.outputs["ps/fitness_curve.csv"] = file_hash_hex(join(ps_dir, "fitness_curve.csv"));
    man.outputs["ps/best_recipe.json"] = file_hash_hex(join(ps_dir, "best_recipe.json"));
    man.volatile_outputs["ps/trial_log.csv"] = file_hash_hex(join(ps_dir, "trial_log.csv"));

    json hybrid_meta;
    hybrid_meta["ps_val_accuracy"] = res.ps_val_accuracy;
    hybrid_meta["hybrid_val_accuracy"] = res.dfs.best_val_accuracy;
    write_json_file(hybrid_meta, join(g.out_dir, "hybrid_result.json"));
    man.outputs["hybrid_result.json"] = file_hash_hex(join(g.out_dir, "hybrid_result.json"));

    EvolveOutputs out;
    write_dfs_outputs(g, res.pool, res.dfs, eval, man, join(g.out_dir, "dfs"), "dfs/", &out);
    std::cout << "hybrid: ps val " << res.ps_val_accuracy << " -> hybrid val "
              << res.dfs.best_val_accuracy << "\n";
    finish_manifest(man, g.out_dir);
    return 0;
  }

  std::cerr << "error: unknown evolve mode: " << mode << "\n";
  return 1;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const Globals& g) {
  const json cfg = load_config(g);
  const json ec = cfg.value("eval", json::object());
  const std::string sources_dir = cfg.value("sources_dir", std::string("."));
  const SourceFiles src = load_sources(sources_dir);
  const std::string model_path = ec.value("model", join(sources_dir, "base.evmg"));
  const std::string task_name = ec.value("task", std::string("combined"));
  const std::string split_name = ec.value("split", std::string("test"));

  const LayeredModel model = load_checkpoint(model_path);
  const toy::TaskSpec spec = spec_for(src.bench, toy::task_id_from_string(task_name));
  toy::Evaluator eval(toy::gen_task(spec));
  toy::Split split;
  if (split_name == "train") split = toy::Split::Train;
  else if (split_name == "validation") split = toy::Split::Validation;
  else if (split_name == "test") split = toy::Split::Test;
  else {
    std::cerr << "error: unknown split: " << split_name << "\n";
    return 1;
  }
  toy::ModelScorer scorer(model);
  const auto res = eval.evaluate(scorer, split);
  ensure_dir(g.out_dir);
  write_verdict_sheet(res, split, join(g.out_dir, "eval.csv"));
  std::cout << model_path << " " << task_name << "/" << split_name << " accuracy "
            << res.accuracy << "\n";
  RunManifest man = begin_manifest("eval", g, resolve_seed(g, cfg));
  man.inputs["model"] = file_hash_hex(model_path);
  man.outputs["eval.csv"] = file_hash_hex(join(g.out_dir, "eval.csv"));
  finish_manifest(man, g.out_dir);
  return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const Globals& g, const std::string& run_dir) {
  std::vector<std::string> warnings;
  std::optional<SourceFiles> sources;
  std::vector<std::pair<std::string, std::string>> checkpoints;  // label, path
  std::vector<std::string> dfs_results;
  std::vector<std::string> recipes;

  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name == "bench.json" && !sources) {
      try {
        sources = load_sources(entry.path().parent_path().string());
      } catch (const std::exception& e) {
        warnings.push_back(std::string("unusable sources dir: ") + e.what());
      }
    } else if (entry.path().extension() == ".evmg") {
      checkpoints.emplace_back(fs::relative(entry.path(), run_dir).string(),
                               entry.path().string());
    } else if (name == "dfs_result.json") {
      dfs_results.push_back(entry.path().string());
    } else if (name == "best_recipe.json") {
      recipes.push_back(entry.path().string());
    }
  }
  std::sort(checkpoints.begin(), checkpoints.end());
  std::sort(dfs_results.begin(), dfs_results.end());
  std::sort(recipes.begin(), recipes.end());

  if (!sources) {
    std::cerr << "error: no usable bench.json under " << run_dir << "\n";
    return 2;
  }
  if (dfs_results.empty()) warnings.push_back("no DFS run found (path report absent)");
  if (recipes.empty()) warnings.push_back("no evolved PS recipe found");

  ensure_dir(g.out_dir);
  const toy::TaskSpec spec = spec_for(sources->bench, toy::TaskId::Combined);
  toy::Evaluator eval(toy::gen_task(spec));

  CsvWriter summary(join(g.out_dir, "summary.csv"),
                    {"model", "split", "accuracy", "value_accuracy", "dialect_rate"});
  for (const auto& [label, path] : checkpoints) {
    LayeredModel model;
    try {
      model = load_checkpoint(path);
    } catch (const std::exception& e) {
      warnings.push_back(label + ": " + e.what());
      continue;
    }
    toy::ModelScorer scorer(model);
    for (toy::Split split :
         {toy::Split::Train, toy::Split::Validation, toy::Split::Test}) {
      const auto res = eval.evaluate(scorer, split);
      double value_acc = 0.0, dialect_rate = 0.0;
      for (const auto& row : res.rows) {
        value_acc += row.value_correct ? 1.0 : 0.0;
        dialect_rate += row.in_dialect ? 1.0 : 0.0;
      }
      const double n = std::max<size_t>(res.rows.size(), 1);
      summary.write_row({label, toy::to_string(split), csv_num(res.accuracy),
                         csv_num(value_acc / n), csv_num(dialect_rate / n)});
    }
  }
  for (const auto& path : dfs_results) {
    std::ifstream is(path);
    const json j = json::parse(is);
    const std::string label = fs::relative(fs::path(path).parent_path(), run_dir).string();
    summary.write_row({label + " (path)", "validation", csv_num(j.value("val_accuracy", 0.0)),
                       "", ""});
    summary.write_row({label + " (path)", "test", csv_num(j.value("test_accuracy", 0.0)),
                       "", ""});
  }

  CsvWriter recipe_csv(join(g.out_dir, "recipe_summary.csv"),
                       {"recipe", "model", "group", "density", "weight", "drop"});
  for (const auto& path : recipes) {
    std::ifstream is(path);
    const json j = json::parse(is);
    const auto names = j.value("model_names", std::vector<std::string>{});
    const int n_groups = j.value("n_groups", 1);
    const auto density = j.value("density", std::vector<double>{});
    const auto weight = j.value("weight", std::vector<double>{});
    const auto drop = j.value("drop", std::vector<double>{});
    const std::string label = fs::relative(fs::path(path).parent_path(), run_dir).string();
    for (size_t k = 0; k < names.size(); ++k) {
      for (int grp = 0; grp < n_groups; ++grp) {
        const size_t slot = k * static_cast<size_t>(n_groups) + static_cast<size_t>(grp);
        recipe_csv.write_row({label, names[k], std::to_string(grp),
                              csv_num(density.at(slot)), csv_num(weight.at(slot)),
                              csv_num(drop.at(k))});
      }
    }
  }

  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "report written to " << join(g.out_dir, "summary.csv") << " ("
            << checkpoints.size() << " checkpoints, " << dfs_results.size()
            << " path models)\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"evomerge: evolutionary model-merging toolkit"};
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config_path, "JSON config file")->expected(1);
  auto* seed_opt = app.add_option("--seed", g.seed, "seed override");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--threads", g.threads, "worker threads for candidate evaluation");

  auto* train = app.add_subcommand("train-sources", "train the base and the three experts");
  auto* merge = app.add_subcommand("merge", "apply a fixed merge recipe");
  auto* evolve = app.add_subcommand("evolve", "evolutionary merge search");
  std::string mode = "ps";
  evolve->add_option("--mode", mode, "ps|dfs|hybrid");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a task split");
  auto* report = app.add_subcommand("report", "consolidated report over a run directory");
  std::string run_dir = ".";
  report->add_option("run_dir", run_dir, "directory holding earlier command outputs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (train->parsed()) return cmd_train_sources(g);
    if (merge->parsed()) return cmd_merge(g);
    if (evolve->parsed()) return cmd_evolve(g, mode);
    if (eval_cmd->parsed()) return cmd_eval(g);
    if (report->parsed()) return cmd_report(g, run_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace evomerge::cli
