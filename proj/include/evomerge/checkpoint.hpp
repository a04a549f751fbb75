#pragma once

#include <string>

#include "evomerge/model.hpp"

namespace evomerge {

// Binary checkpoint layout:
//   bytes 0..7   magic "EVMG0001"
//   bytes 8..11  header length, unsigned 32-bit little-endian
//   header       single-line JSON: arch_id, layers[{name, shape}], vocab_size,
//                embed_dim, n_blocks, n_slots, seed
//   payload      f32 little-endian, concatenated in header layer order
// Save followed by load is bit-exact.

void save_checkpoint(const LayeredModel& model, const std::string& path);
LayeredModel load_checkpoint(const std::string& path);

}  // namespace evomerge
