#pragma once

#include <cstdint>
#include <vector>

#include "evomerge/toy/task.hpp"

namespace evomerge::toy {

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double clip_norm = 5.0;  // global gradient-norm clip per minibatch
  // L2 pull toward the starting weights; keeps fine-tunes mergeable by
  // bounding task-vector growth. Zero disables.
  double anchor_decay = 0.0;
  int batch_size = 32;
  int max_epochs = 200;
  double target_accuracy = 0.95;
  double min_accuracy = 0.60;  // below this at the epoch cap -> "training diverged"
  uint64_t seed = 0;
};

struct TrainTrace {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

// Minibatch SGD with hand-derived gradients (per-slot cross entropy,
// backprop through the residual blocks). Runs until the verdict-based
// training accuracy reaches the target or the epoch cap; throws
// "training diverged" if the floor is missed at the cap.
LayeredModel train_model(LayeredModel init, const std::vector<Problem>& data,
                         const TrainConfig& cfg, TrainTrace* trace = nullptr);

enum class Curriculum { BasePretrain, Dialect, Math1, Math2 };

// The full desk-scale experiment setup: one pretrained base, one dialect
// expert and two math experts fine-tuned from it.
struct BenchConfig {
  Dims dims;
  int modulus = 17;
  int operand_range = 50;
  int train_size = 512;
  int val_size = 200;
  int test_size = 250;
  uint64_t task_seed = 1;
  uint64_t train_seed = 1;
  // Expert curricula draw from the shared equation shuffle past the combined
  // task's train slice, so no expert ever sees a combined-split equation.
  int math_train_size = 6000;
  int dialect_train_size = 1800;
  // The base pretrains on a slice of the expert math region: it starts
  // competent at standard math the way a general pretrained model would.
  int base_math_train_size = 2000;
  // A small dose of dialect-rendered math for the dialect expert, drawn from
  // past the math experts' slice. Gives that source a nascent combined skill
  // for the merge to amplify, the way a general dialect assistant would have
  // seen a little math.
  int dialect_math_train_size = 300;
  // Code-switched arithmetic mixed into every expert's fine-tuning data.
  int expert_code_switch_size = 500;
  // Fraction of the base curriculum replayed during expert fine-tuning.
  // Replay keeps the experts' task vectors clean skill directions instead of
  // skill plus forgetting; the experts still specialize.
  double expert_replay_fraction = 0.25;
  double base_lr = 0.08;
  double dialect_lr = 0.08;
  double math1_lr = 0.12;
  double math2_lr = 0.09;
  double expert_anchor_decay = 0.0;
  int max_epochs = 200;
  double expert_target_accuracy = 0.95;
};

struct SourceSet {
  LayeredModel base;
  LayeredModel dialect;
  LayeredModel math1;
  LayeredModel math2;
};

TaskSpec spec_for(const BenchConfig& cfg, TaskId id);

LayeredModel train_source(const BenchConfig& cfg, Curriculum which,
                          const LayeredModel* base, TrainTrace* trace = nullptr);

SourceSet train_sources(const BenchConfig& cfg);

}  // namespace evomerge::toy
