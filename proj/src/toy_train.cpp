#include "evomerge/toy/train.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "evomerge/rng.hpp"

namespace evomerge::toy {

namespace {

using MutMap = Eigen::Map<RowMajorF>;
using VecMap = Eigen::Map<Eigen::VectorXf>;

// Mutable tensor views plus gradient buffers over one model.
struct Net {
  Net(LayeredModel& m, const LayeredModel* anchor) : dims(dims_of(m)) {
    if (anchor) anchor_ = *anchor;
    const auto split = split_layers(m);
    auto map = [&](size_t idx, int rows, int cols) {
      return MutMap(m.layers[idx].values.data(), rows, cols);
    };
    tok = std::make_unique<MutMap>(map(split.embed[0], dims.vocab, dims.embed));
    pos = std::make_unique<MutMap>(map(split.embed[1], dims.seq_len, dims.embed));
    for (const auto& g : split.blocks) {
      u.push_back(std::make_unique<MutMap>(map(g[0], dims.hidden, dims.embed)));
      v.push_back(std::make_unique<MutMap>(map(g[1], dims.embed, dims.hidden)));
    }
    rw = std::make_unique<MutMap>(
        map(split.readout[0], dims.slots * dims.vocab, dims.embed));
    rb = std::make_unique<VecMap>(m.layers[split.readout[1]].values.data(),
                                  dims.slots * dims.vocab);

    g_tok = RowMajorF::Zero(dims.vocab, dims.embed);
    g_pos = RowMajorF::Zero(dims.seq_len, dims.embed);
    for (int b = 0; b < dims.blocks; ++b) {
      g_u.emplace_back(RowMajorF::Zero(dims.hidden, dims.embed));
      g_v.emplace_back(RowMajorF::Zero(dims.embed, dims.hidden));
    }
    g_rw = RowMajorF::Zero(dims.slots * dims.vocab, dims.embed);
    g_rb = Eigen::VectorXf::Zero(dims.slots * dims.vocab);
    m_tok = g_tok;
    m_pos = g_pos;
    m_u = g_u;
    m_v = g_v;
    m_rw = g_rw;
    m_rb = g_rb;
  }

  void zero_grad() {
    g_tok.setZero();
    g_pos.setZero();
    for (auto& g : g_u) g.setZero();
    for (auto& g : g_v) g.setZero();
    g_rw.setZero();
    g_rb.setZero();
  }

  // Accumulates gradients; returns the sample's mean-over-slots CE loss.
  double backprop(const Problem& p) {
    const int L = dims.seq_len, E = dims.embed, H = dims.hidden, S = dims.slots,
              V = dims.vocab;
    // forward, keeping activations
    Eigen::VectorXf x = Eigen::VectorXf::Zero(E);
    for (int i = 0; i < L; ++i) {
      x += tok->row(p.tokens[i]).cwiseProduct(pos->row(i)).transpose();
    }
    x /= static_cast<float>(L);

    std::vector<Eigen::VectorXf> xs(dims.blocks + 1);
    std::vector<Eigen::VectorXf> pre(dims.blocks);
    xs[0] = x;
    for (int b = 0; b < dims.blocks; ++b) {
      pre[b] = (*u[b]) * xs[b];
      xs[b + 1] = xs[b] + (*v[b]) * pre[b].cwiseMax(0.0f);
    }
    const Eigen::VectorXf& top = xs[dims.blocks];

    double loss = 0.0;
    Eigen::VectorXf g_top = Eigen::VectorXf::Zero(E);
    for (int s = 0; s < S; ++s) {
      auto W = rw->middleRows(s * V, V);
      Eigen::VectorXf logits = W * top + rb->segment(s * V, V);
      const float mx = logits.maxCoeff();
      Eigen::VectorXf ex = (logits.array() - mx).exp();
      const float z = ex.sum();
      const int target = p.answer[s];
      loss += -(static_cast<double>(logits[target] - mx) - std::log(static_cast<double>(z)));
      Eigen::VectorXf g_logits = ex / z;
      g_logits[target] -= 1.0f;
      g_logits /= static_cast<float>(S);
      g_rw.middleRows(s * V, V).noalias() += g_logits * top.transpose();
      g_rb.segment(s * V, V) += g_logits;
      g_top.noalias() += W.transpose() * g_logits;
    }

    Eigen::VectorXf g_x = g_top;
    for (int b = dims.blocks - 1; b >= 0; --b) {
      Eigen::VectorXf h = pre[b].cwiseMax(0.0f);
      Eigen::VectorXf g_h = v[b]->transpose() * g_x;
      Eigen::VectorXf g_pre =
          (pre[b].array() > 0.0f).select(g_h, Eigen::VectorXf::Zero(H));
      g_v[b].noalias() += g_x * h.transpose();
      g_u[b].noalias() += g_pre * xs[b].transpose();
      g_x.noalias() += u[b]->transpose() * g_pre;
    }

    const float inv_l = 1.0f / static_cast<float>(L);
    for (int i = 0; i < L; ++i) {
      const int t = p.tokens[i];
      g_tok.row(t) += inv_l * g_x.cwiseProduct(pos->row(i).transpose()).transpose();
      g_pos.row(i) += inv_l * g_x.cwiseProduct(tok->row(t).transpose()).transpose();
    }
    return loss / S;
  }

  double grad_sq_norm() const {
    double n = static_cast<double>(g_tok.squaredNorm()) + g_pos.squaredNorm() +
               g_rw.squaredNorm() + g_rb.squaredNorm();
    for (int b = 0; b < dims.blocks; ++b) {
      n += static_cast<double>(g_u[b].squaredNorm()) + g_v[b].squaredNorm();
    }
    return n;
  }

  void sgd_step(float lr_over_batch, float momentum, float clip_scale, float lr,
                float anchor_decay) {
    const float step = lr_over_batch * clip_scale;
    auto update = [&](auto& param, auto& vel, const auto& grad, const float* anchor_data) {
      vel = momentum * vel - step * grad;
      param += vel;
      if (anchor_decay > 0.0f && anchor_data != nullptr) {
        Eigen::Map<const Eigen::ArrayXf> a(anchor_data, param.size());
        param.reshaped().array() -= lr * anchor_decay * (param.reshaped().array() - a);
      }
    };
    size_t layer = 0;
    auto anchor_ptr = [&]() -> const float* {
      if (anchor_.layers.empty()) return nullptr;
      return anchor_.layers[layer].values.data();
    };
    update(*tok, m_tok, g_tok, anchor_ptr());
    ++layer;
    update(*pos, m_pos, g_pos, anchor_ptr());
    ++layer;
    for (int b = 0; b < dims.blocks; ++b) {
      update(*u[b], m_u[b], g_u[b], anchor_ptr());
      ++layer;
      update(*v[b], m_v[b], g_v[b], anchor_ptr());
      ++layer;
    }
    update(*rw, m_rw, g_rw, anchor_ptr());
    ++layer;
    update(*rb, m_rb, g_rb, anchor_ptr());
  }

  LayeredModel anchor_;

  Dims dims;
  std::unique_ptr<MutMap> tok, pos, rw;
  std::unique_ptr<VecMap> rb;
  std::vector<std::unique_ptr<MutMap>> u, v;
  RowMajorF g_tok, g_pos, g_rw;
  Eigen::VectorXf g_rb;
  std::vector<RowMajorF> g_u, g_v;
  RowMajorF m_tok, m_pos, m_rw;
  Eigen::VectorXf m_rb;
  std::vector<RowMajorF> m_u, m_v;
};

double dataset_accuracy(const LayeredModel& m, const std::vector<Problem>& data) {
  ModelView view(m);
  int64_t correct = 0;
  for (const auto& p : data) {
    const auto tokens = predict_tokens(view.forward(p.tokens));
    const Verdict v = extract_answer(tokens, p.expected_value);
    if (verdict_correct(v, p.requires_dialect)) ++correct;
  }
  return data.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

LayeredModel train_model(LayeredModel init, const std::vector<Problem>& data,
                         const TrainConfig& cfg, TrainTrace* trace) {
  if (data.empty()) throw std::invalid_argument("empty training data");
  LayeredModel model = std::move(init);
  const LayeredModel anchor = cfg.anchor_decay > 0.0 ? model : LayeredModel{};
  Net net(model, cfg.anchor_decay > 0.0 ? &anchor : nullptr);
  Rng rng(hash_combine(cfg.seed, 0x747261696eULL));

  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainTrace local;
  TrainTrace& tr = trace ? *trace : local;
  double acc = 0.0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    // cosine decay to a tenth of the base rate across the epoch budget
    const double frac = cfg.max_epochs > 1
                            ? static_cast<double>(epoch) / (cfg.max_epochs - 1)
                            : 0.0;
    const double lr = cfg.lr * (0.55 + 0.45 * std::cos(M_PI * frac));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
      net.zero_grad();
      for (size_t i = off; i < end; ++i) epoch_loss += net.backprop(data[order[i]]);
      const double batch = static_cast<double>(end - off);
      const double gnorm = std::sqrt(net.grad_sq_norm()) / batch;
      const double clip =
          cfg.clip_norm > 0.0 && gnorm > cfg.clip_norm ? cfg.clip_norm / gnorm : 1.0;
      net.sgd_step(static_cast<float>(lr / batch), static_cast<float>(cfg.momentum),
                   static_cast<float>(clip), static_cast<float>(lr),
                   static_cast<float>(cfg.anchor_decay));
    }
    acc = dataset_accuracy(model, data);
    tr.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    tr.epoch_accuracy.push_back(acc);
    if (acc >= cfg.target_accuracy) break;
  }

  if (acc < cfg.min_accuracy) {
    std::ostringstream os;
    os << "training diverged: accuracy " << acc << " below " << cfg.min_accuracy << " after "
       << tr.epoch_loss.size() << " epochs; last losses:";
    const size_t n = tr.epoch_loss.size();
    for (size_t i = n > 5 ? n - 5 : 0; i < n; ++i) os << " " << tr.epoch_loss[i];
    throw std::runtime_error(os.str());
  }
  return model;
}

TaskSpec spec_for(const BenchConfig& cfg, TaskId id) {
  TaskSpec spec;
  spec.id = id;
  spec.modulus = cfg.modulus;
  spec.operand_range = cfg.operand_range;
  spec.train_size = cfg.train_size;
  spec.val_size = cfg.val_size;
  spec.test_size = cfg.test_size;
  spec.seq_len = cfg.dims.seq_len;
  spec.n_slots = cfg.dims.slots;
  spec.seed = cfg.task_seed;
  return spec;
}

namespace {

// The base curriculum plus the base's standard-math slice: everything the
// pretrained model saw.
std::vector<Problem> base_curriculum(const BenchConfig& cfg) {
  auto data = gen_base_curriculum(spec_for(cfg, TaskId::Combined), cfg.task_seed);
  if (cfg.base_math_train_size > 0) {
    TaskSpec spec = spec_for(cfg, TaskId::MathStd);
    spec.train_offset = cfg.train_size;  // clear of every combined split
    spec.train_size = cfg.base_math_train_size;
    const auto math = gen_task(spec).split(Split::Train);
    data.insert(data.end(), math.begin(), math.end());
  }
  return data;
}

void append_expert_mix(std::vector<Problem>& data, const BenchConfig& cfg, uint64_t seed) {
  if (cfg.expert_code_switch_size > 0) {
    const auto cs =
        gen_code_switched(spec_for(cfg, TaskId::Combined), cfg.expert_code_switch_size);
    data.insert(data.end(), cs.begin(), cs.end());
  }
  if (cfg.expert_replay_fraction <= 0.0) return;
  auto replay = base_curriculum(cfg);
  Rng rng(hash_combine(seed, 0x7265706c6179ULL));
  rng.shuffle(replay);
  const size_t keep =
      static_cast<size_t>(cfg.expert_replay_fraction * static_cast<double>(replay.size()));
  data.insert(data.end(), replay.begin(), replay.begin() + keep);
}

}  // namespace

LayeredModel train_source(const BenchConfig& cfg, Curriculum which,
                          const LayeredModel* base, TrainTrace* trace) {
  TrainConfig tc;
  tc.max_epochs = cfg.max_epochs;
  switch (which) {
    case Curriculum::BasePretrain: {
      tc.lr = cfg.base_lr;
      tc.seed = hash_combine(cfg.train_seed, 1);
      return train_model(init_model(cfg.dims, hash_combine(cfg.train_seed, 0)),
                         base_curriculum(cfg), tc, trace);
    }
    case Curriculum::Dialect: {
      if (!base) throw std::invalid_argument("experts start from the base checkpoint");
      tc.lr = cfg.dialect_lr;
      tc.seed = hash_combine(cfg.train_seed, 2);
      tc.target_accuracy = cfg.expert_target_accuracy;
      tc.anchor_decay = cfg.expert_anchor_decay;
      TaskSpec spec = spec_for(cfg, TaskId::DialectQa);
      spec.train_size = cfg.dialect_train_size;
      auto data = gen_task(spec).split(Split::Train);
      if (cfg.dialect_math_train_size > 0) {
        TaskSpec dm = spec_for(cfg, TaskId::Combined);
        dm.train_offset = cfg.train_size + cfg.math_train_size;
        dm.train_size = cfg.dialect_math_train_size;
        const auto math = gen_task(dm).split(Split::Train);
        data.insert(data.end(), math.begin(), math.end());
      }
      append_expert_mix(data, cfg, tc.seed);
      return train_model(*base, data, tc, trace);
    }
    case Curriculum::Math1:
    case Curriculum::Math2: {
      if (!base) throw std::invalid_argument("experts start from the base checkpoint");
      const bool second = which == Curriculum::Math2;
      tc.lr = second ? cfg.math2_lr : cfg.math1_lr;  // the two differ by seed and lr only
      tc.seed = hash_combine(cfg.train_seed, second ? 4 : 3);
      tc.target_accuracy = cfg.expert_target_accuracy;
      tc.anchor_decay = cfg.expert_anchor_decay;
      TaskSpec spec = spec_for(cfg, TaskId::MathStd);
      spec.train_offset = cfg.train_size;  // skip the combined fitness equations
      spec.train_size = cfg.math_train_size;
      auto data = gen_task(spec).split(Split::Train);
      append_expert_mix(data, cfg, tc.seed);
      return train_model(*base, data, tc, trace);
    }
  }
  throw std::logic_error("unreachable");
}

SourceSet train_sources(const BenchConfig& cfg) {
  SourceSet s{LayeredModel{}, LayeredModel{}, LayeredModel{}, LayeredModel{}};
  s.base = train_source(cfg, Curriculum::BasePretrain, nullptr);
  s.dialect = train_source(cfg, Curriculum::Dialect, &s.base);
  s.math1 = train_source(cfg, Curriculum::Math1, &s.base);
  s.math2 = train_source(cfg, Curriculum::Math2, &s.base);
  return s;
}

}  // namespace evomerge::toy
