#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evomerge/merge.hpp"
#include "evomerge/toy/task.hpp"

namespace evomerge {

enum class LayerGrouping { WholeModel, PerLayer };

enum class DropMode { Fixed, Searched };

struct RecipeBounds {
  double density_lo = 1e-3;  // clipped-to-zero genotypes must stay in trim's domain
  double density_hi = 1.0;
  double weight_lo = 0.0;
  double weight_hi = 1.0;
  double drop_lo = 0.0;
  double drop_hi = 0.95;
};

// The PS genotype decoded: per source model (optionally per layer group) a
// density and a weight, plus a drop rate per model and the normalization flag.
struct MergeRecipe {
  int n_models = 0;
  int n_groups = 1;
  std::vector<double> density;  // [k * n_groups + g]
  std::vector<double> weight;   // [k * n_groups + g]
  std::vector<double> drop;     // [k]
  bool normalize = false;
};

struct PsConfig {
  LayerGrouping scheme = LayerGrouping::WholeModel;
  bool normalize = false;  // weights are NOT normalized by default
  DropMode drop_mode = DropMode::Fixed;
  double fixed_drop = 0.5;
  RecipeBounds bounds;
  int budget = 300;  // trials; paper scale is 1000
  int population = 0;
  double init_sigma = 1.0 / 6.0;
  uint64_t seed = 0;
  int tie_sign = +1;
  int n_threads = 1;
};

int genotype_length(int n_models, int n_groups, DropMode drop_mode);

// Layout [d_{1,1}, w_{1,1}, d_{1,2}, w_{1,2}, ..., p_1..p_K]; coordinates are
// clipped into the recipe bounds. Idempotent on already-clipped genotypes.
MergeRecipe decode_recipe(std::span<const double> genotype, int n_models, int n_groups,
                          const RecipeBounds& bounds, DropMode drop_mode, double fixed_drop,
                          bool normalize);

// dare_ties_merge with the recipe's per-model (per-group) parameters;
// deterministic in seed. With normalize set, weights are divided by their
// group sum first (uniform when the sum is zero).
LayeredModel apply_recipe(const LayeredModel& base, const std::vector<LayeredModel>& models,
                          const MergeRecipe& recipe, uint64_t seed);

double ps_fitness(const LayeredModel& model, const toy::Evaluator& eval);

struct TrialRecord {
  int trial = 0;
  std::vector<double> genotype;
  double fitness = 0.0;  // NaN when the merged model was degenerate
  double wall_ms = 0.0;
};

struct PsResult {
  MergeRecipe best_recipe;
  std::vector<double> best_genotype;
  LayeredModel best_model;
  double best_fitness = 0.0;
  int best_trial = 0;
  std::vector<TrialRecord> log;
};

// CMA-ES over decode -> apply -> fitness on the evaluator's training split;
// returns the best-ever trial. Throws when the budget is exhausted with no
// finite fitness.
PsResult evolve_ps(const LayeredModel& base, const std::vector<LayeredModel>& models,
                   const toy::Evaluator& eval, const PsConfig& cfg);

}  // namespace evomerge
