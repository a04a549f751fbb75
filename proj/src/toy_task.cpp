#include "evomerge/toy/task.hpp"

#include <cmath>
#include <stdexcept>

#include "evomerge/rng.hpp"

namespace evomerge::toy {

TaskId task_id_from_string(const std::string& s) {
  if (s == "math-std") return TaskId::MathStd;
  if (s == "dialect-qa") return TaskId::DialectQa;
  if (s == "combined") return TaskId::Combined;
  throw std::invalid_argument("unknown task id: " + s);
}

std::string to_string(TaskId id) {
  switch (id) {
    case TaskId::MathStd: return "math-std";
    case TaskId::DialectQa: return "dialect-qa";
    case TaskId::Combined: return "combined";
  }
  return "?";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

namespace {

constexpr int kTrPatterns = 8;
constexpr int kTrValues = 100;
constexpr int kRecPatterns = 8;
constexpr int kRecValues = 100;

// Fixed-width two-digit rendering: every number occupies exactly two token
// positions, so the pooled input encoding is positionally stable.
void append_digits(std::vector<int>& out, int value, bool dialect) {
  const int base0 = dialect ? E0 : D0;
  if (value >= 100) out.push_back(base0 + (value / 100) % 10);
  out.push_back(base0 + (value / 10) % 10);
  out.push_back(base0 + value % 10);
}

std::vector<int> answer_tokens(int value, bool dialect, int n_slots) {
  std::vector<int> digits;
  append_digits(digits, value, dialect);
  std::vector<int> out(static_cast<size_t>(n_slots), PAD);
  const size_t off = out.size() - digits.size();
  for (size_t i = 0; i < digits.size(); ++i) out[off + i] = digits[i];
  return out;
}

void pad_to(std::vector<int>& tokens, int seq_len) {
  if (static_cast<int>(tokens.size()) > seq_len) {
    throw std::logic_error("rendered problem exceeds sequence length");
  }
  tokens.resize(static_cast<size_t>(seq_len), PAD);
}

int filler_token(uint64_t key, int position) {
  return W0 + static_cast<int>(mix64(key ^ static_cast<uint64_t>(position + 1)) % 8);
}

int math_value(int a, int b, int op, int m) {
  switch (op) {
    case 0: return (a + b) % m;
    case 1: return ((a - b) % m + m) % m;
    default: return (a * b) % m;
  }
}

Problem make_math_problem_mixed(const TaskSpec& spec, int64_t id, int a, int b, int op,
                                bool dialect_a, bool dialect_b, bool dialect_ans) {
  Problem p;
  p.id = id;
  p.tokens.push_back(BOS);
  append_digits(p.tokens, a, dialect_a);
  p.tokens.push_back(op == 0 ? OP_ADD : (op == 1 ? OP_SUB : OP_MUL));
  append_digits(p.tokens, b, dialect_b);
  p.tokens.push_back(MOD);
  append_digits(p.tokens, spec.modulus, dialect_ans);
  p.tokens.push_back(EOS);
  pad_to(p.tokens, spec.seq_len);
  p.expected_value = math_value(a, b, op, spec.modulus);
  p.requires_dialect = dialect_ans;
  p.answer = answer_tokens(p.expected_value, dialect_ans, spec.n_slots);
  return p;
}

Problem make_math_problem(const TaskSpec& spec, int64_t id, int a, int b, int op,
                          bool dialect) {
  return make_math_problem_mixed(spec, id, a, b, op, dialect, dialect, dialect);
}

// family 0: re-encode into dialect; 1: re-encode into standard; 2: recall the
// dialect number hidden among filler words.
Problem make_dialect_problem(const TaskSpec& spec, int64_t id, int family, int value,
                             int pattern, uint64_t filler_key) {
  Problem p;
  p.id = id;
  const int lead = pattern % 3;
  const int trail = (pattern / 3) % 2;
  p.tokens.push_back(BOS);
  p.tokens.push_back(family == 0 ? TR_D : (family == 1 ? TR_S : REC));
  for (int i = 0; i < lead; ++i) p.tokens.push_back(filler_token(filler_key, i));
  append_digits(p.tokens, value, /*dialect=*/family != 0);
  for (int i = 0; i < trail; ++i) p.tokens.push_back(filler_token(filler_key, 8 + i));
  p.tokens.push_back(EOS);
  pad_to(p.tokens, spec.seq_len);
  p.expected_value = value;
  p.requires_dialect = family != 1;
  p.answer = answer_tokens(value, /*dialect=*/family != 1, spec.n_slots);
  return p;
}

int64_t enumeration_size(const TaskSpec& spec) {
  if (spec.id == TaskId::DialectQa) {
    return static_cast<int64_t>(2 * kTrValues * kTrPatterns + kRecValues * kRecPatterns);
  }
  return static_cast<int64_t>(spec.operand_range) * spec.operand_range * 3;
}

Problem make_problem(const TaskSpec& spec, int64_t id) {
  if (spec.id == TaskId::DialectQa) {
    const int per_family = kTrValues * kTrPatterns;
    const int family = static_cast<int>(id / per_family);
    const int rest = static_cast<int>(id % per_family);
    const uint64_t key = hash_combine(0x6469616c656374ULL, static_cast<uint64_t>(id));
    return make_dialect_problem(spec, id, family, rest / kTrPatterns, rest % kTrPatterns,
                                key);
  }
  const int op = static_cast<int>(id % 3);
  const int b = static_cast<int>((id / 3) % spec.operand_range);
  const int a = static_cast<int>(id / 3 / spec.operand_range);
  return make_math_problem(spec, id, a, b, op, spec.id == TaskId::Combined);
}

}  // namespace

Task gen_task(const TaskSpec& spec) {
  if (spec.train_size <= 0 || spec.val_size <= 0 || spec.test_size <= 0) {
    throw std::invalid_argument("split sizes must be positive");
  }
  const int64_t total = enumeration_size(spec);
  const int64_t wanted =
      spec.train_size + spec.val_size + spec.test_size + spec.train_offset;
  if (wanted > total) {
    throw std::invalid_argument("requested split sizes (" + std::to_string(wanted) +
                                ") exceed distinct-problem count (" + std::to_string(total) +
                                ")");
  }

  std::vector<int64_t> ids(static_cast<size_t>(total));
  for (int64_t i = 0; i < total; ++i) ids[static_cast<size_t>(i)] = i;
  // The math-family tasks share one shuffle so both renderings of an
  // equation land in the same split slot; the dialect task has its own space.
  const uint64_t salt =
      spec.id == TaskId::DialectQa ? 0x6469616cULL : 0x6d617468ULL;
  Rng rng(hash_combine(spec.seed, salt));
  rng.shuffle(ids);

  Task task;
  task.spec = spec;
  int64_t cursor = 0;
  auto take = [&](Split which, int n) {
    auto& split = task.splits[static_cast<size_t>(which)];
    split.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      split.push_back(make_problem(spec, ids[static_cast<size_t>(cursor++)]));
    }
  };
  take(Split::Test, spec.test_size);
  take(Split::Validation, spec.val_size);
  cursor += spec.train_offset;
  take(Split::Train, spec.train_size);
  return task;
}

std::vector<Problem> gen_code_switched(const TaskSpec& like, int count) {
  std::vector<Problem> out;
  std::vector<int64_t> ids(static_cast<size_t>(enumeration_size(like)));
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int64_t>(i);
  Rng shuffle_rng(hash_combine(like.seed, 0x6d617468ULL));
  shuffle_rng.shuffle(ids);
  const size_t start = ids.size() - static_cast<size_t>(count);
  for (size_t i = start; i < ids.size(); ++i) {
    const int op = static_cast<int>(ids[i] % 3);
    const int b = static_cast<int>((ids[i] / 3) % like.operand_range);
    const int a = static_cast<int>(ids[i] / 3 / like.operand_range);
    const bool flip = (i - start) % 2 == 0;
    out.push_back(make_math_problem_mixed(like, static_cast<int64_t>(i), a, b, op, flip,
                                          !flip, !flip));
  }
  return out;
}

std::vector<Problem> gen_base_curriculum(const TaskSpec& like, uint64_t seed) {
  std::vector<Problem> out;
  const uint64_t key = hash_combine(0x62617365ULL, seed);
  int64_t id = 0;

  // Echo in both alphabets: the recall format over values 0..99.
  for (int alpha = 0; alpha < 2; ++alpha) {
    for (int v = 0; v < 100; ++v) {
      for (int pat = 0; pat < 2; ++pat) {
        TaskSpec s = like;
        Problem p = make_dialect_problem(s, id, /*family=*/2, v, pat,
                                         hash_combine(key, static_cast<uint64_t>(id)));
        if (alpha == 0) {
          // standard-alphabet echo: swap the digit alphabet in place
          for (auto& t : p.tokens) {
            if (is_dialect_digit(t)) t = D0 + digit_value(t);
          }
          for (auto& t : p.answer) {
            if (is_dialect_digit(t)) t = D0 + digit_value(t);
          }
          p.requires_dialect = false;
        }
        out.push_back(std::move(p));
        ++id;
      }
    }
  }
  // Identity-form arithmetic in both alphabets: a+0, 0+a, a*1, 1*a, a-0.
  // Teaches digit composition and mod reduction without two-operand skill.
  for (int alpha = 0; alpha < 2; ++alpha) {
    for (int a = 0; a < like.operand_range; ++a) {
      out.push_back(make_math_problem(like, id++, a, 0, 0, alpha == 1));
      out.push_back(make_math_problem(like, id++, 0, a, 0, alpha == 1));
      out.push_back(make_math_problem(like, id++, a, 1, 2, alpha == 1));
      out.push_back(make_math_problem(like, id++, 1, a, 2, alpha == 1));
      out.push_back(make_math_problem(like, id++, a, 0, 1, alpha == 1));
    }
  }
  // Translations in both directions over the full two-digit range.
  for (int v = 0; v < 100; ++v) {
    for (int pat = 0; pat < 2; ++pat) {
      out.push_back(make_dialect_problem(like, id, 0, v, pat, hash_combine(key, id)));
      ++id;
      out.push_back(make_dialect_problem(like, id, 1, v, pat, hash_combine(key, id)));
      ++id;
    }
  }
  // Single-digit arithmetic in both alphabets: the building-block tables.
  for (int alpha = 0; alpha < 2; ++alpha) {
    for (int a = 0; a < 10; ++a) {
      for (int b = 0; b < 10; ++b) {
        for (int op = 0; op < 3; ++op) {
          out.push_back(make_math_problem(like, id++, a, b, op, alpha == 1));
        }
      }
    }
  }
  return out;
}

Verdict extract_answer(std::span<const int> slots, int expected_value) {
  Verdict v;
  int end = -1;
  for (int i = static_cast<int>(slots.size()) - 1; i >= 0; --i) {
    if (is_digit_token(slots[i])) {
      end = i;
      break;
    }
  }
  if (end < 0) return v;  // no digits anywhere
  const bool dialect = is_dialect_digit(slots[end]);
  int start = end;
  while (start > 0 && is_digit_token(slots[start - 1]) &&
         is_dialect_digit(slots[start - 1]) == dialect) {
    --start;
  }
  long value = 0;
  for (int i = start; i <= end; ++i) value = value * 10 + digit_value(slots[i]);
  v.extracted_value = static_cast<int>(value);
  v.in_dialect = dialect;
  v.value_correct = value == expected_value;
  return v;
}

std::vector<int> predict_tokens(const Eigen::MatrixXf& logits) {
  std::vector<int> out(static_cast<size_t>(logits.rows()));
  for (int s = 0; s < logits.rows(); ++s) {
    int arg = 0;
    float best = logits(s, 0);
    for (int j = 1; j < logits.cols(); ++j) {
      if (logits(s, j) > best) {  // strict: ties keep the lower token id
        best = logits(s, j);
        arg = j;
      }
    }
    out[static_cast<size_t>(s)] = arg;
  }
  return out;
}

void Evaluator::check_arch(const Scorer& scorer) const {
  if (scorer.vocab_size() != kVocabSize || scorer.n_slots() != task_.spec.n_slots) {
    throw std::invalid_argument("scorer architecture does not match task");
  }
}

EvalResult Evaluator::evaluate(const Scorer& scorer, Split split) const {
  check_arch(scorer);
  const auto& problems = task_.split(split);
  reads_[static_cast<size_t>(split)].fetch_add(problems.size());

  EvalResult res;
  res.rows.reserve(problems.size());
  int64_t correct = 0;
  for (const auto& p : problems) {
    const Eigen::MatrixXf logits = scorer.score(p.tokens);
    VerdictRow row;
    row.problem_id = p.id;
    row.split = split;
    if (!logits.allFinite()) {
      ++res.nonfinite;
    } else {
      const auto tokens = predict_tokens(logits);
      const Verdict v = extract_answer(tokens, p.expected_value);
      row.value_correct = v.value_correct;
      row.in_dialect = v.in_dialect;
      row.correct = verdict_correct(v, p.requires_dialect);
    }
    correct += row.correct ? 1 : 0;
    res.rows.push_back(row);
  }
  res.accuracy = problems.empty()
                     ? 0.0
                     : static_cast<double>(correct) / static_cast<double>(problems.size());
  return res;
}

double Evaluator::accuracy(const Scorer& scorer, Split split) const {
  return evaluate(scorer, split).accuracy;
}

double Evaluator::accuracy_subset(const Scorer& scorer, Split split,
                                  std::span<const int> indices) const {
  check_arch(scorer);
  const auto& problems = task_.split(split);
  reads_[static_cast<size_t>(split)].fetch_add(indices.size());
  if (indices.empty()) return 0.0;
  int64_t correct = 0;
  for (int idx : indices) {
    const auto& p = problems.at(static_cast<size_t>(idx));
    const Eigen::MatrixXf logits = scorer.score(p.tokens);
    if (!logits.allFinite()) return 0.0;  // degenerate path, fitness floor
    const auto tokens = predict_tokens(logits);
    const Verdict v = extract_answer(tokens, p.expected_value);
    if (verdict_correct(v, p.requires_dialect)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace evomerge::toy
