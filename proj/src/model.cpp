#include "evomerge/model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "evomerge/rng.hpp"

namespace evomerge {

void validate_model(const LayeredModel& m) {
  std::unordered_set<std::string> names;
  for (const auto& l : m.layers) {
    if (!names.insert(l.name).second) {
      throw std::invalid_argument("duplicate layer name: " + l.name);
    }
    if (static_cast<int64_t>(l.values.size()) != l.size()) {
      std::ostringstream os;
      os << "layer " << l.name << ": " << l.values.size()
         << " values do not match shape product " << l.size();
      throw std::invalid_argument(os.str());
    }
    for (float v : l.values) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("non-finite parameter in layer " + l.name);
      }
    }
  }
}

uint64_t fingerprint(const LayeredModel& m) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : m.layers) {
    for (float v : l.values) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      unsigned char bytes[4] = {static_cast<unsigned char>(bits & 0xff),
                                static_cast<unsigned char>((bits >> 8) & 0xff),
                                static_cast<unsigned char>((bits >> 16) & 0xff),
                                static_cast<unsigned char>((bits >> 24) & 0xff)};
      h = fnv1a64(bytes, 4, h);
    }
  }
  return h;
}

bool merge_compatible(const LayeredModel& a, const LayeredModel& b) {
  if (a.meta.arch_id != b.meta.arch_id) return false;
  if (a.layers.size() != b.layers.size()) return false;
  for (size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].name != b.layers[i].name) return false;
    if (a.layers[i].shape != b.layers[i].shape) return false;
  }
  return true;
}

void require_compatible(const LayeredModel& a, const LayeredModel& b) {
  if (a.meta.arch_id != b.meta.arch_id) {
    throw std::invalid_argument("incompatible models: arch_id " + a.meta.arch_id + " vs " +
                                b.meta.arch_id);
  }
  if (a.layers.size() != b.layers.size()) {
    throw std::invalid_argument("incompatible models: layer counts differ");
  }
  for (size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].name != b.layers[i].name || a.layers[i].shape != b.layers[i].shape) {
      throw std::invalid_argument("incompatible models: layer " + std::to_string(i) + " (" +
                                  a.layers[i].name + " vs " + b.layers[i].name + ")");
    }
  }
}

TaskVector task_vector(const LayeredModel& finetuned, const LayeredModel& base) {
  require_compatible(finetuned, base);
  TaskVector tv;
  tv.base_fingerprint = fingerprint(base);
  tv.layers.reserve(base.layers.size());
  for (size_t i = 0; i < base.layers.size(); ++i) {
    DeltaLayer l;
    l.name = base.layers[i].name;
    l.shape = base.layers[i].shape;
    l.values.resize(base.layers[i].values.size());
    const auto& ft = finetuned.layers[i].values;
    const auto& bs = base.layers[i].values;
    for (size_t j = 0; j < bs.size(); ++j) {
      l.values[j] = static_cast<double>(ft[j]) - static_cast<double>(bs[j]);
    }
    tv.layers.push_back(std::move(l));
  }
  return tv;
}

ArchSplit split_layers(const LayeredModel& m) {
  ArchSplit split;
  std::string current_block;
  bool seen_block = false;
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const std::string& name = m.layers[i].name;
    const size_t dot = name.find('.');
    const std::string prefix = dot == std::string::npos ? name : name.substr(0, dot);
    if (prefix.rfind("block", 0) == 0) {
      if (prefix != current_block) {
        split.blocks.emplace_back();
        current_block = prefix;
      }
      split.blocks.back().push_back(i);
      seen_block = true;
    } else if (!seen_block) {
      split.embed.push_back(i);
    } else {
      split.readout.push_back(i);
    }
  }
  if (static_cast<int64_t>(split.blocks.size()) != m.meta.n_blocks) {
    throw std::invalid_argument("layer list declares " + std::to_string(split.blocks.size()) +
                                " blocks but metadata says " +
                                std::to_string(m.meta.n_blocks));
  }
  return split;
}

LayeredModel apply_task_vectors(const LayeredModel& base,
                                const std::vector<std::pair<double, const TaskVector*>>& pairs,
                                bool allow_foreign_base) {
  const uint64_t base_fp = fingerprint(base);
  for (const auto& [scale, tv] : pairs) {
    (void)scale;
    if (!allow_foreign_base && tv->base_fingerprint != base_fp) {
      throw std::invalid_argument("task vector fingerprint does not match base model");
    }
    if (tv->layers.size() != base.layers.size()) {
      throw std::invalid_argument("task vector layout does not match base model");
    }
    for (size_t i = 0; i < base.layers.size(); ++i) {
      if (tv->layers[i].shape != base.layers[i].shape) {
        throw std::invalid_argument("task vector layer " + std::to_string(i) + " shape mismatch");
      }
    }
  }

  LayeredModel out = base;
  for (size_t i = 0; i < out.layers.size(); ++i) {
    auto& vals = out.layers[i].values;
    for (size_t j = 0; j < vals.size(); ++j) {
      double acc = static_cast<double>(vals[j]);
      for (const auto& [scale, tv] : pairs) {
        acc += scale * tv->layers[i].values[j];
      }
      float v = static_cast<float>(acc);
      if (!std::isfinite(v)) {
        throw std::runtime_error("apply_task_vectors produced a non-finite value in layer " +
                                 out.layers[i].name);
      }
      vals[j] = v;
    }
  }
  return out;
}

}  // namespace evomerge
