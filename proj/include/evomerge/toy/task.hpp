#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "evomerge/toy/arch.hpp"

namespace evomerge::toy {

enum class TaskId { MathStd, DialectQa, Combined };
enum class Split { Train = 0, Validation = 1, Test = 2 };

TaskId task_id_from_string(const std::string& s);
std::string to_string(TaskId id);
std::string to_string(Split s);

struct TaskSpec {
  TaskId id = TaskId::Combined;
  int modulus = 17;
  int operand_range = 50;  // operands in [0, operand_range)
  int train_size = 512;
  int val_size = 200;
  int test_size = 250;
  // Skips this many shuffled problems before cutting the train split. math-std
  // and combined share one shuffle of the same equation space (the split order
  // is test, validation, train), so an expert curriculum built with
  // train_offset >= another task's train size never sees that task's
  // problems in any rendering.
  int train_offset = 0;
  int seq_len = 12;
  int n_slots = 3;
  uint64_t seed = 0;
};

struct Problem {
  int64_t id = 0;  // stable index into the task's canonical enumeration
  std::vector<int> tokens;
  std::vector<int> answer;  // target tokens, right-aligned into the slots
  int expected_value = 0;
  bool requires_dialect = false;
};

struct Task {
  TaskSpec spec;
  std::array<std::vector<Problem>, 3> splits;

  const std::vector<Problem>& split(Split s) const {
    return splits[static_cast<size_t>(s)];
  }
};

// Deterministic in the spec's seed; the three splits are disjoint by
// construction (a seeded shuffle of the canonical problem enumeration).
Task gen_task(const TaskSpec& spec);

// Shallow mixed data for pretraining the shared base: echo problems in both
// alphabets, identity-form arithmetic, translations, and single-digit
// arithmetic.
std::vector<Problem> gen_base_curriculum(const TaskSpec& like, uint64_t seed);

// Code-switched arithmetic: one operand per alphabet, answer follows the
// second operand. Drawn from the tail of the shared equation shuffle, so it
// never collides with the combined task's splits. Fine-tuning mixes include
// it; the base never sees it.
std::vector<Problem> gen_code_switched(const TaskSpec& like, int count);

struct Verdict {
  bool value_correct = false;
  bool in_dialect = false;
  std::optional<int> extracted_value;
};

// Scan the slots right-to-left for the last maximal run of digit tokens from
// a single alphabet; decode its value. Total: every slot configuration yields
// a verdict.
Verdict extract_answer(std::span<const int> slots, int expected_value);

inline bool verdict_correct(const Verdict& v, bool requires_dialect) {
  return v.value_correct && (!requires_dialect || v.in_dialect);
}

// Anything that maps a token sequence to per-slot logits.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual Eigen::MatrixXf score(std::span<const int> tokens) const = 0;
  virtual int vocab_size() const = 0;
  virtual int n_slots() const = 0;
};

class ModelScorer : public Scorer {
 public:
  explicit ModelScorer(const LayeredModel& m) : view_(m) {}
  Eigen::MatrixXf score(std::span<const int> tokens) const override {
    return view_.forward(tokens);
  }
  int vocab_size() const override { return view_.dims().vocab; }
  int n_slots() const override { return view_.dims().slots; }

 private:
  ModelView view_;
};

// Argmax per slot, ties broken by lower token id.
std::vector<int> predict_tokens(const Eigen::MatrixXf& logits);

struct VerdictRow {
  int64_t problem_id = 0;
  Split split = Split::Train;
  bool value_correct = false;
  bool in_dialect = false;
  bool correct = false;
};

struct EvalResult {
  double accuracy = 0.0;
  int nonfinite = 0;  // problems whose logits went non-finite
  std::vector<VerdictRow> rows;
};

// Evaluates scorers on task splits and counts every split access, so search
// code can prove it never touched the test split.
class Evaluator {
 public:
  explicit Evaluator(Task task) : task_(std::move(task)) {}

  const Task& task() const { return task_; }

  EvalResult evaluate(const Scorer& scorer, Split split) const;
  double accuracy(const Scorer& scorer, Split split) const;
  // Accuracy over an index subset of a split (generation batches).
  double accuracy_subset(const Scorer& scorer, Split split,
                         std::span<const int> indices) const;

  uint64_t read_count(Split s) const {
    return reads_[static_cast<size_t>(s)].load();
  }

 private:
  void check_arch(const Scorer& scorer) const;
  Task task_;
  mutable std::array<std::atomic<uint64_t>, 3> reads_{};
};

}  // namespace evomerge::toy
