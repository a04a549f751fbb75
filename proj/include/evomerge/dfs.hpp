#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "evomerge/ps_search.hpp"
#include "evomerge/toy/task.hpp"

namespace evomerge {

struct PoolEntry {
  int model = 0;
  int block = 0;
};

// Global layer list across the source models: all of model 0's blocks, then
// model 1's, and so on, repeated r times. T = M * r indicator slots; the
// genotype index t maps to pool entry t % M in repetition t / M. Model A
// (index 0) anchors the path: its embedding and readout are fixed endpoints.
struct LayerPool {
  std::vector<LayeredModel> models;
  std::vector<PoolEntry> entries;  // size M
  int M = 0;
  int r = 1;

  int T() const { return M * r; }
};

LayerPool build_pool(std::vector<LayeredModel> models, int r);

struct PathStep {
  int t = 0;           // global indicator index
  int pool_index = 0;  // entry index into pool.entries
};

// Layers with I_t > 0, in pool order. Throws on a length mismatch or an
// empty decoded body ("degenerate path").
std::vector<PathStep> decode_path(std::span<const double> indicator, const LayerPool& pool);
// Search-side variant: nullopt instead of throwing on an empty body.
std::optional<std::vector<PathStep>> try_decode_path(std::span<const double> indicator,
                                                     const LayerPool& pool);

enum class ScaleMode { Matrix, Hypernet };

// Feed-forward map (i, j, t) -> scale: one hidden tanh layer of width
// kHyperHidden over inputs (i/M, j/M, t/T), linear output plus one. Its
// parameter count does not depend on M.
struct HyperNetW {
  static constexpr int kHidden = 16;
  static int param_count() { return 3 * kHidden + kHidden + kHidden + 1; }
  Eigen::VectorXd params;
  double scale(int from, int to, int t, int M, int T) const;
};

// Scales applied to the hidden state on every hop. Consecutive same-model
// hops (pool index j == i+1, same source model) always carry scale one.
struct HopScales {
  ScaleMode mode = ScaleMode::Matrix;
  Eigen::MatrixXd w;  // M x M, matrix mode
  HyperNetW hyper;    // hypernet mode

  double hop(const LayerPool& pool, int from_pool, int to_pool, int t) const;
};

// Executes the inference path: model A's embedding, the selected blocks with
// inter-hop scaling, model A's readout. The first hop from the embedding and
// the final hop into the readout use scale one.
class PathScorer : public toy::Scorer {
 public:
  PathScorer(const LayerPool& pool, std::vector<PathStep> path, HopScales scales);
  Eigen::MatrixXf score(std::span<const int> tokens) const override;
  int vocab_size() const override;
  int n_slots() const override;
  const std::vector<PathStep>& path() const { return path_; }
  const HopScales& scales() const { return scales_; }

 private:
  const LayerPool* pool_;
  std::vector<PathStep> path_;
  HopScales scales_;
  std::vector<toy::ModelView> views_;
};

int dfs_genotype_length(const LayerPool& pool, ScaleMode mode);

// Indicator coordinates for model A's blocks in the first repetition start at
// +2 sigma, everything else at zero; matrix scales start at one, hypernet
// parameters at small seed-derived values.
Eigen::VectorXd init_dfs_genotype(const LayerPool& pool, int model_a, double sigma,
                                  ScaleMode mode, uint64_t seed);

HopScales decode_scales(std::span<const double> genotype, const LayerPool& pool,
                        ScaleMode mode);

struct DfsConfig {
  int generations = 40;
  int population = 16;
  int batch_size = 128;
  double init_sigma = 1.0 / 6.0;
  ScaleMode mode = ScaleMode::Matrix;
  uint64_t seed = 0;
  int n_threads = 1;
  int max_degenerate_generations = 5;
  // Test hook: overrides the standard initial mean when set.
  std::optional<Eigen::VectorXd> init_mean_override;
};

struct DfsGenRecord {
  int generation = 0;
  double train_best = 0.0;
  double val_of_best = 0.0;
  double val_best_so_far = 0.0;
  int degenerate = 0;
};

struct DfsResult {
  Eigen::VectorXd best_genotype;
  std::vector<PathStep> best_path;
  HopScales best_scales;
  double best_val_accuracy = 0.0;
  int best_generation = -1;  // -1: the initial mean snapshot
  std::vector<DfsGenRecord> log;
};

// CMA-ES over the concatenated (I, W) genotype. Candidates are scored on a
// per-generation training batch; the generation best is re-scored on the
// validation split and the best validation snapshot is returned. The initial
// mean is snapshot zero, so the identity path is always reachable. The test
// split is never touched.
DfsResult evolve_dfs(const LayerPool& pool, const toy::Evaluator& eval, const DfsConfig& cfg);

struct PathReportRow {
  int step = 0;
  int model = 0;
  int layer = 0;
  double scale = 1.0;
};

std::vector<PathReportRow> analyze_path(const std::vector<PathStep>& path,
                                        const LayerPool& pool, const HopScales& scales);

// The same path with every hop scale forced to one (the ablation re-run).
HopScales ablate_scales(const LayerPool& pool);

struct HybridConfig {
  PsConfig ps;
  DfsConfig dfs;
  int dfs_partner = 0;  // index into the PS source list for pool model B
  int pool_r = 2;
};

struct HybridResult {
  PsResult ps;
  DfsResult dfs;
  LayerPool pool;
  double ps_val_accuracy = 0.0;
};

// PS merge first; the merged model becomes DFS model A with the chosen source
// as model B, per the hybrid strategy.
HybridResult evolve_hybrid(const LayeredModel& base, const std::vector<LayeredModel>& sources,
                           const toy::Evaluator& eval, const HybridConfig& cfg);

}  // namespace evomerge
