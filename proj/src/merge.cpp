#include "evomerge/merge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "evomerge/rng.hpp"

namespace evomerge {

namespace {

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

// Keep the ceil(density*n) largest-magnitude entries of one flat tensor,
// ties at the threshold broken by lower index.
void trim_values(std::vector<double>& vals, double density) {
  if (!(density > 0.0) || density > 1.0) {
    throw std::invalid_argument("trim density must be in (0, 1]");
  }
  const size_t n = vals.size();
  if (n == 0) return;
  const auto keep = static_cast<size_t>(std::ceil(density * static_cast<double>(n)));
  if (keep >= n) return;
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    return std::fabs(vals[a]) > std::fabs(vals[b]);
  });
  std::vector<double> out(n, 0.0);
  for (size_t i = 0; i < keep; ++i) out[idx[i]] = vals[idx[i]];
  vals = std::move(out);
}

void require_common_layout(const std::vector<TaskVector>& tvs) {
  if (tvs.empty()) throw std::invalid_argument("empty task vector list");
  for (size_t k = 1; k < tvs.size(); ++k) {
    if (tvs[k].layers.size() != tvs[0].layers.size()) {
      throw std::invalid_argument("task vector layouts differ");
    }
    for (size_t l = 0; l < tvs[0].layers.size(); ++l) {
      if (tvs[k].layers[l].shape != tvs[0].layers[l].shape) {
        throw std::invalid_argument("task vector layer shapes differ");
      }
    }
  }
}

uint64_t mask_word(uint64_t seed, int model_index, int layer_index, uint64_t element) {
  uint64_t h = mix64(seed);
  h = mix64(h ^ (static_cast<uint64_t>(model_index) + 0x100000ULL));
  h = mix64(h ^ (static_cast<uint64_t>(layer_index) + 0x200000ULL));
  return mix64(h ^ element);
}

}  // namespace

LayeredModel linear_merge(const LayeredModel& a, const LayeredModel& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("lambda must be in [0, 1]");
  }
  require_compatible(a, b);
  LayeredModel out = a;
  for (size_t l = 0; l < out.layers.size(); ++l) {
    auto& vals = out.layers[l].values;
    const auto& bv = b.layers[l].values;
    for (size_t j = 0; j < vals.size(); ++j) {
      vals[j] = static_cast<float>(lambda * static_cast<double>(vals[j]) +
                                   (1.0 - lambda) * static_cast<double>(bv[j]));
    }
  }
  return out;
}

LayeredModel slerp_merge(const LayeredModel& a, const LayeredModel& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("lambda must be in [0, 1]");
  }
  require_compatible(a, b);
  LayeredModel out = a;
  for (size_t l = 0; l < out.layers.size(); ++l) {
    auto& va = out.layers[l].values;
    const auto& vb = b.layers[l].values;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t j = 0; j < va.size(); ++j) {
      dot += static_cast<double>(va[j]) * static_cast<double>(vb[j]);
      na += static_cast<double>(va[j]) * static_cast<double>(va[j]);
      nb += static_cast<double>(vb[j]) * static_cast<double>(vb[j]);
    }
    if (na == 0.0 || nb == 0.0) {
      throw std::invalid_argument("slerp_merge: zero-norm layer " + out.layers[l].name);
    }
    const double cos_omega = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    const double omega = std::acos(cos_omega);
    const double sin_omega = std::sin(omega);
    double w1, w2;
    if (std::fabs(sin_omega) < 1e-6 || !std::isfinite(sin_omega)) {
      w1 = lambda;  // near-parallel: interpolate linearly
      w2 = 1.0 - lambda;
    } else {
      w1 = std::sin((1.0 - lambda) * omega) / sin_omega;
      w2 = std::sin(lambda * omega) / sin_omega;
    }
    for (size_t j = 0; j < va.size(); ++j) {
      va[j] = static_cast<float>(w1 * static_cast<double>(va[j]) +
                                 w2 * static_cast<double>(vb[j]));
    }
  }
  return out;
}

TaskVector ties_trim(const TaskVector& tv, double density) {
  TaskVector out = tv;
  for (auto& l : out.layers) trim_values(l.values, density);
  return out;
}

SignVectors ties_elect_sign(const std::vector<TaskVector>& trimmed, int tie_sign) {
  require_common_layout(trimmed);
  SignVectors signs(trimmed[0].layers.size());
  for (size_t l = 0; l < signs.size(); ++l) {
    const size_t n = trimmed[0].layers[l].values.size();
    signs[l].resize(n);
    for (size_t c = 0; c < n; ++c) {
      double sum = 0.0;
      for (const auto& tv : trimmed) sum += tv.layers[l].values[c];
      signs[l][c] = static_cast<int8_t>(sum > 0.0 ? 1 : (sum < 0.0 ? -1 : tie_sign));
    }
  }
  return signs;
}

TaskVector ties_disjoint_merge(const std::vector<TaskVector>& trimmed, const SignVectors& signs) {
  require_common_layout(trimmed);
  if (signs.size() != trimmed[0].layers.size()) {
    throw std::invalid_argument("sign layout does not match task vectors");
  }
  TaskVector out = trimmed[0];
  for (size_t l = 0; l < out.layers.size(); ++l) {
    if (signs[l].size() != out.layers[l].values.size()) {
      throw std::invalid_argument("sign layout does not match task vectors");
    }
    for (size_t c = 0; c < out.layers[l].values.size(); ++c) {
      double acc = 0.0;
      int n = 0;
      for (const auto& tv : trimmed) {
        const double v = tv.layers[l].values[c];
        if (v != 0.0 && sign_of(v) == signs[l][c]) {
          acc += v;
          ++n;
        }
      }
      out.layers[l].values[c] = n > 0 ? acc / n : 0.0;
    }
  }
  return out;
}

std::vector<uint8_t> dare_mask(const DareConfig& cfg, size_t n) {
  if (!(cfg.drop_rate >= 0.0 && cfg.drop_rate < 1.0)) {
    throw std::invalid_argument("DARE drop rate must be in [0, 1)");
  }
  std::vector<uint8_t> mask(n);
  for (size_t c = 0; c < n; ++c) {
    const uint64_t h = mask_word(cfg.seed, cfg.model_index, cfg.layer_index, c);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    mask[c] = u < cfg.drop_rate ? 1 : 0;
  }
  return mask;
}

TaskVector dare_sparsify(const TaskVector& tv, const DareConfig& cfg) {
  if (!(cfg.drop_rate >= 0.0 && cfg.drop_rate < 1.0)) {
    throw std::invalid_argument("DARE drop rate must be in [0, 1)");
  }
  const double rescale = 1.0 / (1.0 - cfg.drop_rate);
  TaskVector out = tv;
  for (size_t l = 0; l < out.layers.size(); ++l) {
    DareConfig layer_cfg = cfg;
    layer_cfg.layer_index = cfg.layer_index + static_cast<int>(l);
    const auto mask = dare_mask(layer_cfg, out.layers[l].values.size());
    auto& vals = out.layers[l].values;
    for (size_t c = 0; c < vals.size(); ++c) {
      vals[c] = mask[c] ? 0.0 : rescale * vals[c];
    }
  }
  return out;
}

LayeredModel dare_ties_merge_general(const LayeredModel& base,
                                     const std::vector<LayeredModel>& models,
                                     const MergeParams& params) {
  const size_t K = models.size();
  if (K == 0) throw std::invalid_argument("need at least one model to merge");
  if (params.density.size() != K || params.weight.size() != K ||
      (!params.drop.empty() && params.drop.size() != K)) {
    throw std::invalid_argument("merge parameter tables do not match model count");
  }
  const size_t L = base.layers.size();
  for (size_t k = 0; k < K; ++k) {
    require_compatible(models[k], base);
    if (params.density[k].size() != L || params.weight[k].size() != L ||
        (!params.drop.empty() && params.drop[k].size() != L)) {
      throw std::invalid_argument("merge parameter tables do not match layer count");
    }
  }

  std::vector<TaskVector> trimmed;
  trimmed.reserve(K);
  for (size_t k = 0; k < K; ++k) {
    TaskVector tv = task_vector(models[k], base);
    for (size_t l = 0; l < L; ++l) {
      auto& vals = tv.layers[l].values;
      if (!params.drop.empty() && params.drop[k][l] > 0.0) {
        DareConfig cfg{params.drop[k][l], params.seed, static_cast<int>(k),
                       static_cast<int>(l)};
        const auto mask = dare_mask(cfg, vals.size());
        const double rescale = 1.0 / (1.0 - cfg.drop_rate);
        for (size_t c = 0; c < vals.size(); ++c) {
          vals[c] = mask[c] ? 0.0 : rescale * vals[c];
        }
      }
      trim_values(vals, params.density[k][l]);
    }
    trimmed.push_back(std::move(tv));
  }

  const SignVectors signs = ties_elect_sign(trimmed, params.tie_sign);

  LayeredModel out = base;
  for (size_t l = 0; l < L; ++l) {
    auto& vals = out.layers[l].values;
    for (size_t c = 0; c < vals.size(); ++c) {
      double acc = 0.0;
      int n = 0;
      for (size_t k = 0; k < K; ++k) {
        const double v = trimmed[k].layers[l].values[c];
        if (v != 0.0 && sign_of(v) == signs[l][c]) {
          acc += params.weight[k][l] * v;
          ++n;
        }
      }
      vals[c] = static_cast<float>(static_cast<double>(vals[c]) + (n > 0 ? acc / n : 0.0));
    }
  }
  return out;
}

namespace {

MergeParams broadcast_params(size_t K, size_t L, double density, double drop,
                             const std::vector<double>& scales, int tie_sign, uint64_t seed,
                             bool with_drop) {
  if (scales.size() != K) {
    throw std::invalid_argument("scale count does not match model count");
  }
  MergeParams p;
  p.seed = seed;
  p.tie_sign = tie_sign;
  p.density.assign(K, std::vector<double>(L, density));
  p.weight.resize(K);
  for (size_t k = 0; k < K; ++k) p.weight[k].assign(L, scales[k]);
  if (with_drop) p.drop.assign(K, std::vector<double>(L, drop));
  return p;
}

}  // namespace

LayeredModel ties_merge(const LayeredModel& base, const std::vector<LayeredModel>& models,
                        const TiesConfig& cfg, const std::vector<double>& scales) {
  return dare_ties_merge_general(
      base, models,
      broadcast_params(models.size(), base.layers.size(), cfg.density, 0.0, scales,
                       cfg.tie_sign, 0, /*with_drop=*/false));
}

LayeredModel dare_linear_merge(const LayeredModel& base, const std::vector<LayeredModel>& models,
                               double drop_rate, uint64_t seed,
                               const std::vector<double>& scales) {
  if (models.empty()) throw std::invalid_argument("need at least one model to merge");
  if (scales.size() != models.size()) {
    throw std::invalid_argument("scale count does not match model count");
  }
  std::vector<TaskVector> sparsified;
  sparsified.reserve(models.size());
  for (size_t k = 0; k < models.size(); ++k) {
    DareConfig cfg{drop_rate, seed, static_cast<int>(k), 0};
    sparsified.push_back(dare_sparsify(task_vector(models[k], base), cfg));
  }
  std::vector<std::pair<double, const TaskVector*>> pairs;
  for (size_t k = 0; k < models.size(); ++k) pairs.emplace_back(scales[k], &sparsified[k]);
  return apply_task_vectors(base, pairs);
}

LayeredModel dare_ties_merge(const LayeredModel& base, const std::vector<LayeredModel>& models,
                             const TiesConfig& cfg, double drop_rate, uint64_t seed,
                             const std::vector<double>& scales) {
  return dare_ties_merge_general(
      base, models,
      broadcast_params(models.size(), base.layers.size(), cfg.density, drop_rate, scales,
                       cfg.tie_sign, seed, /*with_drop=*/true));
}

LayeredModel frankenmerge(const std::vector<LayeredModel>& models,
                          const std::vector<LayerSlice>& slices) {
  if (models.empty()) throw std::invalid_argument("no models");
  if (slices.empty()) throw std::invalid_argument("empty slices");

  std::vector<ArchSplit> splits;
  splits.reserve(models.size());
  for (const auto& m : models) splits.push_back(split_layers(m));

  // Block groups must line up shape-for-shape across models.
  const auto& ref_group = splits[0].blocks.at(0);
  for (size_t k = 0; k < models.size(); ++k) {
    for (const auto& group : splits[k].blocks) {
      if (group.size() != ref_group.size()) {
        throw std::invalid_argument("incompatible block shapes across models");
      }
      for (size_t j = 0; j < group.size(); ++j) {
        if (models[k].layers[group[j]].shape != models[0].layers[ref_group[j]].shape) {
          throw std::invalid_argument("incompatible block shapes across models");
        }
      }
    }
  }

  LayeredModel out;
  out.meta = models[0].meta;
  for (size_t i : splits[0].embed) out.layers.push_back(models[0].layers[i]);

  int64_t block_index = 0;
  for (const auto& s : slices) {
    if (s.model < 0 || s.model >= static_cast<int>(models.size())) {
      throw std::invalid_argument("slice model index out of range");
    }
    const auto& blocks = splits[s.model].blocks;
    if (s.begin < 0 || s.end < s.begin || s.end > static_cast<int>(blocks.size())) {
      throw std::invalid_argument("slice layer range out of range");
    }
    for (int b = s.begin; b < s.end; ++b) {
      for (size_t j : blocks[b]) {
        Layer l = models[s.model].layers[j];
        const std::string& old = l.name;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "block%02lld", static_cast<long long>(block_index));
        l.name = std::string(buf) + old.substr(old.find('.'));
        out.layers.push_back(std::move(l));
      }
      ++block_index;
    }
  }
  if (block_index == 0) throw std::invalid_argument("empty slices");

  for (size_t i : splits[0].readout) out.layers.push_back(models[0].layers[i]);
  out.meta.n_blocks = block_index;
  return out;
}

}  // namespace evomerge
