#pragma once

#include <span>
#include <string>

#include <Eigen/Dense>

#include "evomerge/model.hpp"

namespace evomerge::toy {

// Vocabulary: standard digits d0-d9, dialect digits e0-e9, operators,
// task markers, and filler "word" tokens.
enum Token : int {
  PAD = 0,
  BOS = 1,
  EOS = 2,
  D0 = 3,   // d0..d9 -> 3..12
  E0 = 13,  // e0..e9 -> 13..22
  OP_ADD = 23,
  OP_SUB = 24,
  OP_MUL = 25,
  MOD = 26,
  TR_D = 27,  // "re-encode the number in dialect digits"
  TR_S = 28,  // "re-encode the number in standard digits"
  REC = 29,   // "repeat the number hidden in the sequence"
  W0 = 30,    // w0..w7 -> 30..37, filler words
};

constexpr int kVocabSize = 38;

inline bool is_std_digit(int t) { return t >= D0 && t < D0 + 10; }
inline bool is_dialect_digit(int t) { return t >= E0 && t < E0 + 10; }
inline bool is_digit_token(int t) { return is_std_digit(t) || is_dialect_digit(t); }
inline int digit_value(int t) { return is_std_digit(t) ? t - D0 : t - E0; }

std::string token_name(int t);

struct Dims {
  int seq_len = 12;
  int embed = 32;
  int hidden = 64;
  int blocks = 8;
  int slots = 3;
  int vocab = kVocabSize;
};

constexpr const char* kArchId = "toy-residual-v1";

// Random initialization; layer order is embed.tok, embed.pos, blockNN.{U,V},
// readout.W, readout.b.
LayeredModel init_model(const Dims& dims, uint64_t seed);

Dims dims_of(const LayeredModel& m);

using RowMajorF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMajorF = Eigen::Map<const RowMajorF>;

// Fast read-only view over a toy model's tensors. The input embedding binds
// tokens to positions multiplicatively before mean pooling so that token
// order is visible downstream.
class ModelView {
 public:
  explicit ModelView(const LayeredModel& m);

  const Dims& dims() const { return dims_; }

  Eigen::VectorXf embed_input(std::span<const int> tokens) const;
  // x <- x + V * relu(U * x)
  void apply_block(int block, Eigen::VectorXf& x) const;
  // slots x vocab logits
  Eigen::MatrixXf readout(const Eigen::VectorXf& x) const;
  Eigen::MatrixXf forward(std::span<const int> tokens) const;

  MapRowMajorF block_u(int block) const;
  MapRowMajorF block_v(int block) const;

 private:
  const LayeredModel* model_;
  Dims dims_;
  const float* tok_ = nullptr;
  const float* pos_ = nullptr;
  std::vector<const float*> u_, v_;
  const float* rw_ = nullptr;
  const float* rb_ = nullptr;
};

// Apply one residual block given raw U/V tensors; shared by ModelView and the
// data-flow-space path executor so their arithmetic is identical.
void apply_block_raw(const float* u, const float* v, int hidden, int embed,
                     Eigen::VectorXf& x);

}  // namespace evomerge::toy
