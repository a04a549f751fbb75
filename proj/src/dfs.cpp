#include "evomerge/dfs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "evomerge/cma_es.hpp"
#include "evomerge/parallel.hpp"
#include "evomerge/rng.hpp"

namespace evomerge {

LayerPool build_pool(std::vector<LayeredModel> models, int r) {
  if (models.empty()) throw std::invalid_argument("pool needs at least one model");
  if (r < 1) throw std::invalid_argument("repetition count must be at least 1");
  LayerPool pool;
  const toy::Dims ref = toy::dims_of(models[0]);
  for (size_t m = 0; m < models.size(); ++m) {
    const toy::Dims d = toy::dims_of(models[m]);
    if (d.embed != ref.embed) {
      throw std::invalid_argument("hidden-width mismatch across pooled models");
    }
    for (int b = 0; b < d.blocks; ++b) {
      pool.entries.push_back({static_cast<int>(m), b});
    }
  }
  pool.models = std::move(models);
  pool.M = static_cast<int>(pool.entries.size());
  pool.r = r;
  return pool;
}

std::optional<std::vector<PathStep>> try_decode_path(std::span<const double> indicator,
                                                     const LayerPool& pool) {
  if (static_cast<int>(indicator.size()) != pool.T()) {
    throw std::invalid_argument("indicator length does not match pool T");
  }
  std::vector<PathStep> steps;
  for (int t = 0; t < pool.T(); ++t) {
    if (indicator[static_cast<size_t>(t)] > 0.0) steps.push_back({t, t % pool.M});
  }
  if (steps.empty()) return std::nullopt;
  return steps;
}

std::vector<PathStep> decode_path(std::span<const double> indicator, const LayerPool& pool) {
  auto steps = try_decode_path(indicator, pool);
  if (!steps) throw std::runtime_error("degenerate path: no layer has a positive indicator");
  return *steps;
}

double HyperNetW::scale(int from, int to, int t, int M, int T) const {
  if (params.size() != param_count()) {
    throw std::invalid_argument("hypernet parameter count mismatch");
  }
  const double x0 = static_cast<double>(from) / M;
  const double x1 = static_cast<double>(to) / M;
  const double x2 = static_cast<double>(t) / T;
  double out = params[param_count() - 1];  // b2
  const double* w1 = params.data();        // kHidden x 3, row-major
  const double* b1 = params.data() + 3 * kHidden;
  const double* w2 = params.data() + 4 * kHidden;
  for (int h = 0; h < kHidden; ++h) {
    const double a = w1[3 * h] * x0 + w1[3 * h + 1] * x1 + w1[3 * h + 2] * x2 + b1[h];
    out += w2[h] * std::tanh(a);
  }
  return out + 1.0;
}

double HopScales::hop(const LayerPool& pool, int from_pool, int to_pool, int t) const {
  // Consecutive same-model hops carry scale one regardless of the genotype.
  if (to_pool == from_pool + 1 &&
      pool.entries[static_cast<size_t>(from_pool)].model ==
          pool.entries[static_cast<size_t>(to_pool)].model) {
    return 1.0;
  }
  if (mode == ScaleMode::Matrix) return w(from_pool, to_pool);
  return hyper.scale(from_pool, to_pool, t, pool.M, pool.T());
}

PathScorer::PathScorer(const LayerPool& pool, std::vector<PathStep> path, HopScales scales)
    : pool_(&pool), path_(std::move(path)), scales_(std::move(scales)) {
  if (path_.empty()) throw std::runtime_error("degenerate path: empty layer sequence");
  views_.reserve(pool.models.size());
  for (const auto& m : pool.models) views_.emplace_back(m);
}

Eigen::MatrixXf PathScorer::score(std::span<const int> tokens) const {
  Eigen::VectorXf x = views_[0].embed_input(tokens);
  int prev = -1;
  for (const auto& step : path_) {
    if (prev >= 0) {
      const double s = scales_.hop(*pool_, prev, step.pool_index, step.t);
      if (s != 1.0) x *= static_cast<float>(s);
    }
    const auto& entry = pool_->entries[static_cast<size_t>(step.pool_index)];
    views_[static_cast<size_t>(entry.model)].apply_block(entry.block, x);
    prev = step.pool_index;
  }
  return views_[0].readout(x);
}

int PathScorer::vocab_size() const { return toy::dims_of(pool_->models[0]).vocab; }
int PathScorer::n_slots() const { return toy::dims_of(pool_->models[0]).slots; }

int dfs_genotype_length(const LayerPool& pool, ScaleMode mode) {
  return pool.T() +
         (mode == ScaleMode::Matrix ? pool.M * pool.M : HyperNetW::param_count());
}

Eigen::VectorXd init_dfs_genotype(const LayerPool& pool, int model_a, double sigma,
                                  ScaleMode mode, uint64_t seed) {
  if (model_a < 0 || model_a >= static_cast<int>(pool.models.size())) {
    throw std::invalid_argument("model_a index out of range");
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dfs_genotype_length(pool, mode));
  for (int m = 0; m < pool.M; ++m) {
    if (pool.entries[static_cast<size_t>(m)].model == model_a) {
      g[m] = 2.0 * sigma;  // first repetition only: the path starts as model A
    }
  }
  if (mode == ScaleMode::Matrix) {
    g.segment(pool.T(), pool.M * pool.M).setOnes();
  } else {
    Rng rng(hash_combine(seed, 0x68797065726eULL));
    for (int i = 0; i < HyperNetW::param_count(); ++i) {
      g[pool.T() + i] = 0.05 * rng.normal();
    }
  }
  return g;
}

HopScales decode_scales(std::span<const double> genotype, const LayerPool& pool,
                        ScaleMode mode) {
  if (static_cast<int>(genotype.size()) != dfs_genotype_length(pool, mode)) {
    throw std::invalid_argument("genotype length does not match pool configuration");
  }
  HopScales scales;
  scales.mode = mode;
  const double* tail = genotype.data() + pool.T();
  if (mode == ScaleMode::Matrix) {
    scales.w.resize(pool.M, pool.M);
    for (int i = 0; i < pool.M; ++i) {
      for (int j = 0; j < pool.M; ++j) scales.w(i, j) = tail[i * pool.M + j];
    }
  } else {
    scales.hyper.params =
        Eigen::Map<const Eigen::VectorXd>(tail, HyperNetW::param_count());
  }
  return scales;
}

namespace {

struct Candidate {
  std::optional<std::vector<PathStep>> path;
  double fitness = std::numeric_limits<double>::quiet_NaN();
};

std::vector<int> generation_batch(const toy::Evaluator& eval, int batch_size, uint64_t seed,
                                  int generation) {
  const int n = static_cast<int>(eval.task().split(toy::Split::Train).size());
  std::vector<int> all(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
  if (batch_size >= n) return all;
  Rng rng(hash_combine(seed, hash_combine(0xba7c4ULL, static_cast<uint64_t>(generation))));
  rng.shuffle(all);
  all.resize(static_cast<size_t>(batch_size));
  return all;
}

}  // namespace

DfsResult evolve_dfs(const LayerPool& pool, const toy::Evaluator& eval, const DfsConfig& cfg) {
  const int len = dfs_genotype_length(pool, cfg.mode);

  EsConfig es;
  es.dim = len;
  es.init_sigma = cfg.init_sigma;
  es.population = cfg.population;
  es.seed = cfg.seed;
  es.init_mean = cfg.init_mean_override
                     ? *cfg.init_mean_override
                     : init_dfs_genotype(pool, 0, cfg.init_sigma, cfg.mode, cfg.seed);
  if (es.init_mean.size() != len) {
    throw std::invalid_argument("initial mean length does not match genotype length");
  }
  CmaEs opt(es);

  DfsResult res;
  res.best_val_accuracy = -1.0;

  // Snapshot zero: the initial mean itself (the identity path under the
  // standard initialization).
  {
    auto path = try_decode_path(
        std::span<const double>(es.init_mean.data(), static_cast<size_t>(len)).first(
            static_cast<size_t>(pool.T())),
        pool);
    if (path) {
      PathScorer scorer(pool, *path,
                        decode_scales(std::span<const double>(es.init_mean.data(),
                                                              static_cast<size_t>(len)),
                                      pool, cfg.mode));
      res.best_val_accuracy = eval.accuracy(scorer, toy::Split::Validation);
      res.best_genotype = es.init_mean;
      res.best_path = *path;
      res.best_scales = scorer.scales();
      res.best_generation = -1;
    }
  }

  int consecutive_degenerate = 0;
  for (int gen = 0; gen < cfg.generations; ++gen) {
    const auto& candidates = opt.ask();
    const auto batch = generation_batch(eval, cfg.batch_size, cfg.seed, gen);

    std::vector<Candidate> scored(candidates.size());
    parallel_for(static_cast<int>(candidates.size()), cfg.n_threads, [&](int i) {
      const auto& x = candidates[static_cast<size_t>(i)];
      auto& c = scored[static_cast<size_t>(i)];
      c.path = try_decode_path(
          std::span<const double>(x.data(), static_cast<size_t>(x.size())).first(
              static_cast<size_t>(pool.T())),
          pool);
      if (!c.path) return;  // degenerate: fitness stays NaN, ranked worst
      PathScorer scorer(
          pool, *c.path,
          decode_scales(std::span<const double>(x.data(), static_cast<size_t>(x.size())),
                        pool, cfg.mode));
      c.fitness = eval.accuracy_subset(scorer, toy::Split::Train, batch);
    });

    int degenerate = 0;
    int best_i = -1;
    for (size_t i = 0; i < scored.size(); ++i) {
      if (!scored[i].path) {
        ++degenerate;
        continue;
      }
      if (best_i < 0 || scored[i].fitness > scored[static_cast<size_t>(best_i)].fitness) {
        best_i = static_cast<int>(i);
      }
    }

    DfsGenRecord rec;
    rec.generation = gen;
    rec.degenerate = degenerate;

    if (degenerate == static_cast<int>(scored.size())) {
      ++consecutive_degenerate;
      if (consecutive_degenerate >= cfg.max_degenerate_generations) {
        throw std::runtime_error(
            "evolve_dfs aborted: every candidate decoded to an empty path for " +
            std::to_string(consecutive_degenerate) + " consecutive generations (generation " +
            std::to_string(gen) + ")");
      }
    } else {
      consecutive_degenerate = 0;
      const auto& best = scored[static_cast<size_t>(best_i)];
      rec.train_best = best.fitness;
      const auto& x = candidates[static_cast<size_t>(best_i)];
      PathScorer scorer(
          pool, *best.path,
          decode_scales(std::span<const double>(x.data(), static_cast<size_t>(x.size())),
                        pool, cfg.mode));
      rec.val_of_best = eval.accuracy(scorer, toy::Split::Validation);
      if (rec.val_of_best > res.best_val_accuracy) {
        res.best_val_accuracy = rec.val_of_best;
        res.best_genotype = x;
        res.best_path = *best.path;
        res.best_scales = scorer.scales();
        res.best_generation = gen;
      }
    }
    rec.val_best_so_far = res.best_val_accuracy;
    res.log.push_back(rec);

    std::vector<double> fitness(scored.size());
    for (size_t i = 0; i < scored.size(); ++i) fitness[i] = scored[i].fitness;
    opt.tell(fitness, /*maximize=*/true);
  }

  if (res.best_generation == -1 && res.best_val_accuracy < 0.0) {
    throw std::runtime_error("evolve_dfs: no valid path was ever decoded");
  }
  return res;
}

std::vector<PathReportRow> analyze_path(const std::vector<PathStep>& path,
                                        const LayerPool& pool, const HopScales& scales) {
  std::vector<PathReportRow> rows;
  rows.reserve(path.size());
  int prev = -1;
  for (const auto& step : path) {
    PathReportRow row;
    row.step = step.t;
    row.model = pool.entries[static_cast<size_t>(step.pool_index)].model;
    row.layer = pool.entries[static_cast<size_t>(step.pool_index)].block;
    row.scale = prev >= 0 ? scales.hop(pool, prev, step.pool_index, step.t) : 1.0;
    rows.push_back(row);
    prev = step.pool_index;
  }
  return rows;
}

HopScales ablate_scales(const LayerPool& pool) {
  HopScales scales;
  scales.mode = ScaleMode::Matrix;
  scales.w = Eigen::MatrixXd::Ones(pool.M, pool.M);
  return scales;
}

HybridResult evolve_hybrid(const LayeredModel& base, const std::vector<LayeredModel>& sources,
                           const toy::Evaluator& eval, const HybridConfig& cfg) {
  if (cfg.dfs_partner < 0 || cfg.dfs_partner >= static_cast<int>(sources.size())) {
    throw std::invalid_argument("dfs_partner index out of range");
  }
  HybridResult res;
  res.ps = evolve_ps(base, sources, eval, cfg.ps);
  {
    toy::ModelScorer scorer(res.ps.best_model);
    res.ps_val_accuracy = eval.accuracy(scorer, toy::Split::Validation);
  }
  res.pool = build_pool({res.ps.best_model, sources[static_cast<size_t>(cfg.dfs_partner)]},
                        cfg.pool_r);
  res.dfs = evolve_dfs(res.pool, eval, cfg.dfs);
  return res;
}

}  // namespace evomerge
