#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evomerge {

struct Layer {
  std::string name;
  std::vector<float> values;     // flat, row-major
  std::vector<int64_t> shape;

  int64_t size() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

struct ArchMeta {
  std::string arch_id;
  int64_t vocab_size = 0;
  int64_t embed_dim = 0;
  int64_t n_blocks = 0;
  int64_t n_slots = 0;
  uint64_t seed = 0;  // creation seed, recorded in checkpoints
};

// Named, ordered parameter tensors plus architecture metadata. Immutable by
// convention: every operation returns a new model. Layer order is
// authoritative for tensor pairing; names are for reporting.
struct LayeredModel {
  ArchMeta meta;
  std::vector<Layer> layers;

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& l : layers) n += l.size();
    return n;
  }
};

// Same name/shape layout as a model layer, but double-precision: task
// vectors carry the full difference so that reconstruction at scale one is
// byte-exact, and multi-model sums accumulate without drift.
struct DeltaLayer {
  std::string name;
  std::vector<double> values;
  std::vector<int64_t> shape;
};

// Per-layer delta against a base model, same layout as the models it was
// derived from.
struct TaskVector {
  uint64_t base_fingerprint = 0;
  std::vector<DeltaLayer> layers;
};

// Throws std::invalid_argument when an invariant is broken: non-finite
// values, duplicate layer names, or a shape/value-count mismatch.
void validate_model(const LayeredModel& m);

// 64-bit FNV-1a over the payload bytes (little-endian f32, layer order).
uint64_t fingerprint(const LayeredModel& m);

bool merge_compatible(const LayeredModel& a, const LayeredModel& b);
// Throws with a description of the first mismatch.
void require_compatible(const LayeredModel& a, const LayeredModel& b);

// tau = finetuned - base, elementwise per layer.
TaskVector task_vector(const LayeredModel& finetuned, const LayeredModel& base);

// base + sum_k scale_k * tau_k, accumulated in double. Every tau must carry
// the base's fingerprint unless allow_foreign_base is set.
LayeredModel apply_task_vectors(const LayeredModel& base,
                                const std::vector<std::pair<double, const TaskVector*>>& pairs,
                                bool allow_foreign_base = false);

// Structural view of a model's layer list: embedding layers first, then one
// layer group per residual block (names "blockNN.*"), then readout layers.
struct ArchSplit {
  std::vector<size_t> embed;                // layer indices
  std::vector<std::vector<size_t>> blocks;  // one group per block, in order
  std::vector<size_t> readout;
};

ArchSplit split_layers(const LayeredModel& m);

}  // namespace evomerge
