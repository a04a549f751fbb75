#include "evomerge/ps_search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "evomerge/cma_es.hpp"
#include "evomerge/parallel.hpp"

namespace evomerge {

namespace {

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

// Group index per tensor layer: whole-model -> all zero; per-layer -> one
// group for the embedding, one per block, one for the readout.
std::vector<int> layer_group_map(const LayeredModel& base, LayerGrouping scheme) {
  std::vector<int> map(base.layers.size(), 0);
  if (scheme == LayerGrouping::WholeModel) return map;
  const auto split = split_layers(base);
  for (size_t i : split.embed) map[i] = 0;
  for (size_t b = 0; b < split.blocks.size(); ++b) {
    for (size_t i : split.blocks[b]) map[i] = 1 + static_cast<int>(b);
  }
  for (size_t i : split.readout) map[i] = 1 + static_cast<int>(split.blocks.size());
  return map;
}

int group_count(const LayeredModel& base, LayerGrouping scheme) {
  if (scheme == LayerGrouping::WholeModel) return 1;
  return 2 + static_cast<int>(base.meta.n_blocks);
}

}  // namespace

int genotype_length(int n_models, int n_groups, DropMode drop_mode) {
  return 2 * n_models * n_groups + (drop_mode == DropMode::Searched ? n_models : 0);
}

MergeRecipe decode_recipe(std::span<const double> genotype, int n_models, int n_groups,
                          const RecipeBounds& bounds, DropMode drop_mode, double fixed_drop,
                          bool normalize) {
  const int expected = genotype_length(n_models, n_groups, drop_mode);
  if (static_cast<int>(genotype.size()) != expected) {
    throw std::invalid_argument("genotype length " + std::to_string(genotype.size()) +
                                " does not match expected " + std::to_string(expected));
  }
  MergeRecipe r;
  r.n_models = n_models;
  r.n_groups = n_groups;
  r.normalize = normalize;
  r.density.resize(static_cast<size_t>(n_models) * n_groups);
  r.weight.resize(static_cast<size_t>(n_models) * n_groups);
  for (int k = 0; k < n_models; ++k) {
    for (int g = 0; g < n_groups; ++g) {
      const size_t slot = static_cast<size_t>(k) * n_groups + g;
      r.density[slot] = clip(genotype[2 * slot], bounds.density_lo, bounds.density_hi);
      r.weight[slot] = clip(genotype[2 * slot + 1], bounds.weight_lo, bounds.weight_hi);
    }
  }
  r.drop.resize(static_cast<size_t>(n_models));
  for (int k = 0; k < n_models; ++k) {
    const double p = drop_mode == DropMode::Searched
                         ? genotype[static_cast<size_t>(2 * n_models * n_groups + k)]
                         : fixed_drop;
    r.drop[static_cast<size_t>(k)] = clip(p, bounds.drop_lo, bounds.drop_hi);
  }
  return r;
}

LayeredModel apply_recipe(const LayeredModel& base, const std::vector<LayeredModel>& models,
                          const MergeRecipe& recipe, uint64_t seed) {
  const int K = static_cast<int>(models.size());
  if (recipe.n_models != K) {
    throw std::invalid_argument("recipe model count does not match source list");
  }
  const LayerGrouping scheme =
      recipe.n_groups == 1 ? LayerGrouping::WholeModel : LayerGrouping::PerLayer;
  if (recipe.n_groups != group_count(base, scheme)) {
    throw std::invalid_argument("recipe group count does not match architecture");
  }
  const auto groups = layer_group_map(base, scheme);
  const size_t L = base.layers.size();

  // Optional normalization: weights divided by their per-group sum; a zero
  // sum falls back to uniform weights.
  std::vector<double> weight = recipe.weight;
  if (recipe.normalize) {
    for (int g = 0; g < recipe.n_groups; ++g) {
      double sum = 0.0;
      for (int k = 0; k < K; ++k) sum += weight[static_cast<size_t>(k) * recipe.n_groups + g];
      for (int k = 0; k < K; ++k) {
        auto& w = weight[static_cast<size_t>(k) * recipe.n_groups + g];
        w = sum > 0.0 ? w / sum : 1.0 / K;
      }
    }
  }

  MergeParams params;
  params.seed = seed;
  params.density.assign(static_cast<size_t>(K), std::vector<double>(L));
  params.weight.assign(static_cast<size_t>(K), std::vector<double>(L));
  params.drop.assign(static_cast<size_t>(K), std::vector<double>(L));
  for (int k = 0; k < K; ++k) {
    for (size_t l = 0; l < L; ++l) {
      const size_t slot = static_cast<size_t>(k) * recipe.n_groups + groups[l];
      params.density[static_cast<size_t>(k)][l] = recipe.density[slot];
      params.weight[static_cast<size_t>(k)][l] = weight[slot];
      params.drop[static_cast<size_t>(k)][l] = recipe.drop[static_cast<size_t>(k)];
    }
  }
  return dare_ties_merge_general(base, models, params);
}

double ps_fitness(const LayeredModel& model, const toy::Evaluator& eval) {
  toy::ModelScorer scorer(model);
  return eval.accuracy(scorer, toy::Split::Train);
}

PsResult evolve_ps(const LayeredModel& base, const std::vector<LayeredModel>& models,
                   const toy::Evaluator& eval, const PsConfig& cfg) {
  if (models.empty()) throw std::invalid_argument("no source models");
  if (cfg.budget < 1) throw std::invalid_argument("budget must be at least 1");
  const int K = static_cast<int>(models.size());
  const int G = group_count(base, cfg.scheme);
  const int dim = genotype_length(K, G, cfg.drop_mode);

  EsConfig es;
  es.dim = dim;
  es.init_sigma = cfg.init_sigma;
  es.population = cfg.population;
  es.seed = cfg.seed;
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd hi = Eigen::VectorXd::Ones(dim);
  for (int k = 0; k < K && cfg.drop_mode == DropMode::Searched; ++k) {
    hi[2 * K * G + k] = cfg.bounds.drop_hi;
  }
  es.bounds = std::make_pair(lo, hi);
  CmaEs opt(es);

  PsResult res;
  res.best_fitness = -1.0;
  int trials = 0;
  bool any_finite = false;

  auto eval_candidate = [&](const Eigen::VectorXd& x) -> double {
    const MergeRecipe recipe =
        decode_recipe(std::span<const double>(x.data(), static_cast<size_t>(x.size())), K, G,
                      cfg.bounds, cfg.drop_mode, cfg.fixed_drop, cfg.normalize);
    try {
      const LayeredModel merged = apply_recipe(base, models, recipe, cfg.seed);
      return ps_fitness(merged, eval);
    } catch (const std::runtime_error&) {
      return std::numeric_limits<double>::quiet_NaN();  // degenerate merge; keep searching
    }
  };

  while (trials < cfg.budget) {
    const auto& candidates = opt.ask();
    const int m = std::min<int>(static_cast<int>(candidates.size()), cfg.budget - trials);
    std::vector<double> fitness(candidates.size(),
                                std::numeric_limits<double>::quiet_NaN());
    std::vector<double> walls(static_cast<size_t>(m), 0.0);
    parallel_for(m, cfg.n_threads, [&](int i) {
      const auto t0 = std::chrono::steady_clock::now();
      fitness[static_cast<size_t>(i)] = eval_candidate(candidates[static_cast<size_t>(i)]);
      const auto t1 = std::chrono::steady_clock::now();
      walls[static_cast<size_t>(i)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    });
    // Log in candidate order, single writer.
    for (int i = 0; i < m; ++i) {
      TrialRecord rec;
      rec.trial = trials + i;
      rec.genotype.assign(candidates[static_cast<size_t>(i)].data(),
                          candidates[static_cast<size_t>(i)].data() +
                              candidates[static_cast<size_t>(i)].size());
      rec.fitness = fitness[static_cast<size_t>(i)];
      rec.wall_ms = walls[static_cast<size_t>(i)];
      res.log.push_back(std::move(rec));
      const double f = fitness[static_cast<size_t>(i)];
      if (std::isfinite(f)) {
        any_finite = true;
        if (f > res.best_fitness) {
          res.best_fitness = f;
          res.best_trial = trials + i;
          res.best_genotype.assign(candidates[static_cast<size_t>(i)].data(),
                                   candidates[static_cast<size_t>(i)].data() +
                                       candidates[static_cast<size_t>(i)].size());
        }
      }
    }
    trials += m;
    if (m < static_cast<int>(candidates.size())) break;  // budget ended mid-generation
    opt.tell(fitness, /*maximize=*/true);
  }

  if (!any_finite) {
    throw std::runtime_error("evolve_ps: budget exhausted with no finite fitness across " +
                             std::to_string(trials) + " trials");
  }

  res.best_recipe = decode_recipe(res.best_genotype, K, G, cfg.bounds, cfg.drop_mode,
                                  cfg.fixed_drop, cfg.normalize);
  res.best_model = apply_recipe(base, models, res.best_recipe, cfg.seed);
  return res;
}

}  // namespace evomerge
