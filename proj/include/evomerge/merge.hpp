#pragma once

#include <cstdint>
#include <vector>

#include "evomerge/model.hpp"

namespace evomerge {

// Drop-And-REscale: tau_hat = (1/(1-p)) * ((1-m) .* tau), m ~ Bernoulli(p).
// The mask stream is counter-based, keyed by (seed, model_index, layer_index,
// element index), so merges are reproducible and order-independent.
struct DareConfig {
  double drop_rate = 0.5;  // p in [0, 1)
  uint64_t seed = 0;
  int model_index = 0;  // stream tag
  int layer_index = 0;  // stream tag
};

struct TiesConfig {
  double density = 1.0;  // fraction of largest-magnitude entries kept, (0, 1]
  int tie_sign = +1;     // sign elected when the coordinate sum is exactly zero
};

// One sign per coordinate, per layer: +1 or -1.
using SignVectors = std::vector<std::vector<int8_t>>;

// theta = lambda*a + (1-lambda)*b. Endpoints are exact.
LayeredModel linear_merge(const LayeredModel& a, const LayeredModel& b, double lambda);

// Per-layer spherical interpolation over the flattened tensors; falls back to
// linear interpolation when |sin(angle)| < 1e-6. Zero-norm layers are errors.
LayeredModel slerp_merge(const LayeredModel& a, const LayeredModel& b, double lambda);

// TIES step 1: per layer, keep the ceil(density*n) largest-magnitude entries,
// zero the rest. Ties at the threshold keep the lower index.
TaskVector ties_trim(const TaskVector& tv, double density);

// TIES step 2: per coordinate, the sign of the sum across task vectors; an
// exactly-zero sum takes tie_sign.
SignVectors ties_elect_sign(const std::vector<TaskVector>& trimmed, int tie_sign = +1);

// TIES step 3: per coordinate, the mean of the entries whose sign matches the
// elected sign (zeros excluded); 0 where nothing matches.
TaskVector ties_disjoint_merge(const std::vector<TaskVector>& trimmed, const SignVectors& signs);

// The deterministic Bernoulli(p) mask for one layer of one model.
std::vector<uint8_t> dare_mask(const DareConfig& cfg, size_t n);

TaskVector dare_sparsify(const TaskVector& tv, const DareConfig& cfg);

// Full merges. Per-model parameters are given per (model k, layer l) so the
// parameter-space search can vary them by layer group; the convenience
// overloads below broadcast scalars. All accumulate in double and write f32.
struct MergeParams {
  // Indexed [model][layer]; empty drop == no DARE (p = 0 everywhere).
  std::vector<std::vector<double>> density;
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> drop;
  uint64_t seed = 0;
  int tie_sign = +1;
};

// DARE sparsification (when drop is non-empty) followed by the three TIES
// steps; coordinate result = base + sum_k weight_k*v_k / n_matching.
LayeredModel dare_ties_merge_general(const LayeredModel& base,
                                     const std::vector<LayeredModel>& models,
                                     const MergeParams& params);

LayeredModel ties_merge(const LayeredModel& base, const std::vector<LayeredModel>& models,
                        const TiesConfig& cfg, const std::vector<double>& scales);

LayeredModel dare_linear_merge(const LayeredModel& base, const std::vector<LayeredModel>& models,
                               double drop_rate, uint64_t seed,
                               const std::vector<double>& scales);

LayeredModel dare_ties_merge(const LayeredModel& base, const std::vector<LayeredModel>& models,
                             const TiesConfig& cfg, double drop_rate, uint64_t seed,
                             const std::vector<double>& scales);

// Passthrough layer stacking: residual blocks are concatenated slices,
// embedding and readout come from the first-listed model.
struct LayerSlice {
  int model = 0;
  int begin = 0;  // block range [begin, end)
  int end = 0;
};

LayeredModel frankenmerge(const std::vector<LayeredModel>& models,
                          const std::vector<LayerSlice>& slices);

}  // namespace evomerge
