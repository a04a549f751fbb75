#include "evomerge/toy/arch.hpp"

#include <cstdio>
#include <stdexcept>

#include "evomerge/rng.hpp"

namespace evomerge::toy {

std::string token_name(int t) {
  switch (t) {
    case PAD: return "pad";
    case BOS: return "bos";
    case EOS: return "eos";
    case OP_ADD: return "+";
    case OP_SUB: return "-";
    case OP_MUL: return "*";
    case MOD: return "mod";
    case TR_D: return "tr_d";
    case TR_S: return "tr_s";
    case REC: return "rec";
    default: break;
  }
  if (is_std_digit(t)) return "d" + std::to_string(t - D0);
  if (is_dialect_digit(t)) return "e" + std::to_string(t - E0);
  if (t >= W0 && t < kVocabSize) return "w" + std::to_string(t - W0);
  return "tok" + std::to_string(t);
}

LayeredModel init_model(const Dims& dims, uint64_t seed) {
  Rng rng(hash_combine(seed, 0x70795f696e6974ULL));
  LayeredModel m;
  m.meta.arch_id = kArchId;
  m.meta.vocab_size = dims.vocab;
  m.meta.embed_dim = dims.embed;
  m.meta.n_blocks = dims.blocks;
  m.meta.n_slots = dims.slots;
  m.meta.seed = seed;

  auto add = [&m](const std::string& name, std::vector<int64_t> shape,
                  auto&& fill) {
    Layer l;
    l.name = name;
    l.shape = std::move(shape);
    l.values.resize(static_cast<size_t>(l.size()));
    fill(l.values);
    m.layers.push_back(std::move(l));
  };

  add("embed.tok", {dims.vocab, dims.embed}, [&](std::vector<float>& v) {
    for (auto& x : v) x = static_cast<float>(0.5 * rng.normal());
  });
  // Positional gains start near one so early training sees a plain mean pool.
  add("embed.pos", {dims.seq_len, dims.embed}, [&](std::vector<float>& v) {
    for (auto& x : v) x = static_cast<float>(1.0 + 0.2 * rng.normal());
  });
  const double u_scale = std::sqrt(2.0 / dims.embed);
  // residual branches start small so the stream stays near unit scale
  // through the whole stack
  const double v_scale = std::sqrt(2.0 / dims.hidden) / std::sqrt(2.0 * dims.blocks);
  for (int b = 0; b < dims.blocks; ++b) {
    char name[32];
    std::snprintf(name, sizeof(name), "block%02d.U", b);
    add(name, {dims.hidden, dims.embed}, [&](std::vector<float>& v) {
      for (auto& x : v) x = static_cast<float>(u_scale * rng.normal());
    });
    std::snprintf(name, sizeof(name), "block%02d.V", b);
    add(name, {dims.embed, dims.hidden}, [&](std::vector<float>& v) {
      for (auto& x : v) x = static_cast<float>(v_scale * rng.normal());
    });
  }
  const double r_scale = std::sqrt(1.0 / dims.embed);
  add("readout.W", {dims.slots, dims.vocab, dims.embed}, [&](std::vector<float>& v) {
    for (auto& x : v) x = static_cast<float>(r_scale * rng.normal());
  });
  add("readout.b", {dims.slots, dims.vocab},
      [&](std::vector<float>& v) { std::fill(v.begin(), v.end(), 0.0f); });
  return m;
}

Dims dims_of(const LayeredModel& m) {
  if (m.meta.arch_id != kArchId) {
    throw std::invalid_argument("not a toy-residual model: " + m.meta.arch_id);
  }
  Dims d;
  d.vocab = static_cast<int>(m.meta.vocab_size);
  d.embed = static_cast<int>(m.meta.embed_dim);
  d.blocks = static_cast<int>(m.meta.n_blocks);
  d.slots = static_cast<int>(m.meta.n_slots);
  const auto split = split_layers(m);
  d.seq_len = static_cast<int>(m.layers[split.embed.at(1)].shape.at(0));
  d.hidden = static_cast<int>(m.layers[split.blocks.at(0).at(0)].shape.at(0));
  return d;
}

ModelView::ModelView(const LayeredModel& m) : model_(&m), dims_(dims_of(m)) {
  const auto split = split_layers(m);
  tok_ = m.layers[split.embed.at(0)].values.data();
  pos_ = m.layers[split.embed.at(1)].values.data();
  for (const auto& group : split.blocks) {
    if (group.size() != 2) throw std::invalid_argument("block group must hold U and V");
    u_.push_back(m.layers[group[0]].values.data());
    v_.push_back(m.layers[group[1]].values.data());
  }
  rw_ = m.layers[split.readout.at(0)].values.data();
  rb_ = m.layers[split.readout.at(1)].values.data();
}

Eigen::VectorXf ModelView::embed_input(std::span<const int> tokens) const {
  if (static_cast<int>(tokens.size()) != dims_.seq_len) {
    throw std::invalid_argument("input length does not match sequence length");
  }
  Eigen::VectorXf x = Eigen::VectorXf::Zero(dims_.embed);
  for (int i = 0; i < dims_.seq_len; ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= dims_.vocab) throw std::invalid_argument("token id out of vocabulary");
    const float* e = tok_ + static_cast<size_t>(t) * dims_.embed;
    const float* p = pos_ + static_cast<size_t>(i) * dims_.embed;
    for (int j = 0; j < dims_.embed; ++j) x[j] += e[j] * p[j];
  }
  x /= static_cast<float>(dims_.seq_len);
  return x;
}

void apply_block_raw(const float* u, const float* v, int hidden, int embed,
                     Eigen::VectorXf& x) {
  MapRowMajorF U(u, hidden, embed);
  MapRowMajorF V(v, embed, hidden);
  Eigen::VectorXf h = (U * x).cwiseMax(0.0f);
  x.noalias() += V * h;
}

void ModelView::apply_block(int block, Eigen::VectorXf& x) const {
  apply_block_raw(u_.at(block), v_.at(block), dims_.hidden, dims_.embed, x);
}

Eigen::MatrixXf ModelView::readout(const Eigen::VectorXf& x) const {
  Eigen::MatrixXf logits(dims_.slots, dims_.vocab);
  for (int s = 0; s < dims_.slots; ++s) {
    MapRowMajorF W(rw_ + static_cast<size_t>(s) * dims_.vocab * dims_.embed, dims_.vocab,
                   dims_.embed);
    Eigen::Map<const Eigen::VectorXf> b(rb_ + static_cast<size_t>(s) * dims_.vocab,
                                        dims_.vocab);
    logits.row(s) = (W * x + b).transpose();
  }
  return logits;
}

Eigen::MatrixXf ModelView::forward(std::span<const int> tokens) const {
  Eigen::VectorXf x = embed_input(tokens);
  for (int b = 0; b < dims_.blocks; ++b) apply_block(b, x);
  return readout(x);
}

MapRowMajorF ModelView::block_u(int block) const {
  return MapRowMajorF(u_.at(block), dims_.hidden, dims_.embed);
}

MapRowMajorF ModelView::block_v(int block) const {
  return MapRowMajorF(v_.at(block), dims_.embed, dims_.hidden);
}

}  // namespace evomerge::toy
