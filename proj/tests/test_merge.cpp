#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "evomerge/merge.hpp"
#include "evomerge/rng.hpp"
#include "evomerge/toy/arch.hpp"

using namespace evomerge;

namespace {

LayeredModel flat(std::vector<float> values, const std::string& name = "w") {
  LayeredModel m;
  m.meta.arch_id = "flat-test";
  Layer l;
  l.name = name;
  l.shape = {static_cast<int64_t>(values.size())};
  l.values = std::move(values);
  m.layers.push_back(std::move(l));
  return m;
}

LayeredModel random_flat(uint64_t seed, int n) {
  Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return flat(std::move(v));
}

bool same_bytes(const LayeredModel& a, const LayeredModel& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].values.size() != b.layers[i].values.size()) return false;
    if (std::memcmp(a.layers[i].values.data(), b.layers[i].values.data(),
                    a.layers[i].values.size() * 4) != 0) {
      return false;
    }
  }
  return true;
}

// --- independent single-vector reference implementations ------------------
// These recompute the merge semantics coordinate by coordinate, separately
// from the library's layer-table code paths.

std::vector<double> oracle_trim(const std::vector<double>& v, double density) {
  const size_t keep =
      static_cast<size_t>(std::ceil(density * static_cast<double>(v.size())));
  // selection by repeated max keeps lower indices on magnitude ties
  std::vector<double> out(v.size(), 0.0);
  std::vector<bool> taken(v.size(), false);
  for (size_t pick = 0; pick < keep && pick < v.size(); ++pick) {
    int best = -1;
    for (size_t i = 0; i < v.size(); ++i) {
      if (taken[i]) continue;
      if (best < 0 || std::fabs(v[i]) > std::fabs(v[static_cast<size_t>(best)])) {
        best = static_cast<int>(i);
      }
    }
    taken[static_cast<size_t>(best)] = true;
    out[static_cast<size_t>(best)] = v[static_cast<size_t>(best)];
  }
  return out;
}

std::vector<int> oracle_elect(const std::vector<std::vector<double>>& trimmed, int tie_sign) {
  std::vector<int> signs(trimmed[0].size());
  for (size_t c = 0; c < signs.size(); ++c) {
    double sum = 0.0;
    for (const auto& tv : trimmed) sum += tv[c];
    signs[c] = sum > 0.0 ? 1 : (sum < 0.0 ? -1 : tie_sign);
  }
  return signs;
}

// base + sum_k scale_k * v_k over sign-matching nonzero coordinates, divided
// by the matching count.
std::vector<float> oracle_weighted_disjoint(const std::vector<float>& base,
                                            const std::vector<std::vector<double>>& trimmed,
                                            const std::vector<int>& signs,
                                            const std::vector<double>& scales) {
  std::vector<float> out(base.size());
  for (size_t c = 0; c < base.size(); ++c) {
    double acc = 0.0;
    int n = 0;
    for (size_t k = 0; k < trimmed.size(); ++k) {
      const double v = trimmed[k][c];
      const int s = v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
      if (v != 0.0 && s == signs[c]) {
        acc += scales[k] * v;
        ++n;
      }
    }
    out[c] = static_cast<float>(static_cast<double>(base[c]) + (n > 0 ? acc / n : 0.0));
  }
  return out;
}

std::vector<double> oracle_dare(const std::vector<double>& tau, double p, uint64_t seed,
                                int model_index, int layer_index) {
  DareConfig cfg{p, seed, model_index, layer_index};
  const auto mask = dare_mask(cfg, tau.size());
  std::vector<double> out(tau.size());
  for (size_t c = 0; c < tau.size(); ++c) {
    out[c] = mask[c] ? 0.0 : (1.0 / (1.0 - p)) * tau[c];
  }
  return out;
}

std::vector<double> oracle_tau(const LayeredModel& model, const LayeredModel& base) {
  std::vector<double> tau(base.layers[0].values.size());
  for (size_t c = 0; c < tau.size(); ++c) {
    tau[c] = static_cast<double>(model.layers[0].values[c]) -
             static_cast<double>(base.layers[0].values[c]);
  }
  return tau;
}

}  // namespace

TEST_CASE("linear_merge basics") {
  const LayeredModel a = flat({2.0f, 0.0f});
  const LayeredModel b = flat({0.0f, 2.0f});
  const LayeredModel mid = linear_merge(a, b, 0.5);
  CHECK(mid.layers[0].values[0] == 1.0f);
  CHECK(mid.layers[0].values[1] == 1.0f);

  CHECK(same_bytes(linear_merge(a, b, 1.0), a));
  CHECK(same_bytes(linear_merge(a, b, 0.0), b));
  CHECK_THROWS(linear_merge(a, b, 1.5));
  CHECK_THROWS(linear_merge(a, b, -0.1));
}

TEST_CASE("linear_merge matches the elementwise oracle on random input") {
  const LayeredModel a = random_flat(41, 16);
  const LayeredModel b = random_flat(42, 16);
  const LayeredModel out = linear_merge(a, b, 0.3);
  for (size_t c = 0; c < 16; ++c) {
    const float expect = static_cast<float>(0.3 * static_cast<double>(a.layers[0].values[c]) +
                                            0.7 * static_cast<double>(b.layers[0].values[c]));
    CHECK(out.layers[0].values[c] == expect);
  }
}

TEST_CASE("linear_merge of a model with itself is the identity") {
  const LayeredModel a = random_flat(43, 12);
  for (double lam : {0.0, 0.25, 0.5, 0.77, 1.0}) {
    CHECK(same_bytes(linear_merge(a, a, lam), a));
  }
}

TEST_CASE("slerp_merge basics") {
  const LayeredModel a = flat({1.0f, 0.0f});
  const LayeredModel b = flat({0.0f, 1.0f});
  const LayeredModel mid = slerp_merge(a, b, 0.5);
  const float r = static_cast<float>(std::sqrt(2.0) / 2.0);
  CHECK(std::fabs(mid.layers[0].values[0] - r) < 1e-6);
  CHECK(std::fabs(mid.layers[0].values[1] - r) < 1e-6);

  CHECK(same_bytes(slerp_merge(a, b, 0.0), a));

  SUBCASE("parallel inputs fall back to linear") {
    const LayeredModel a2 = random_flat(50, 8);
    LayeredModel b2 = a2;
    for (auto& v : b2.layers[0].values) v *= 2.0f;
    const LayeredModel s = slerp_merge(a2, b2, 0.3);
    const LayeredModel l = linear_merge(a2, b2, 0.3);
    for (size_t c = 0; c < 8; ++c) {
      CHECK(std::fabs(s.layers[0].values[c] - l.layers[0].values[c]) < 1e-6);
    }
  }
  SUBCASE("zero-norm layer is an error") {
    CHECK_THROWS(slerp_merge(flat({0.0f, 0.0f}), b, 0.5));
  }
  SUBCASE("equal norms at lambda one half preserve the norm") {
    Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<float> va(16), vb(16);
      for (auto& x : va) x = static_cast<float>(rng.normal());
      for (auto& x : vb) x = static_cast<float>(rng.normal());
      double na = 0, nb = 0;
      for (float x : va) na += x * x;
      for (float x : vb) nb += x * x;
      const double scale = std::sqrt(na / nb);
      for (auto& x : vb) x = static_cast<float>(x * scale);
      const LayeredModel s = slerp_merge(flat(va), flat(vb), 0.5);
      double ns = 0;
      for (float x : s.layers[0].values) ns += x * x;
      CHECK(std::fabs(std::sqrt(ns) - std::sqrt(na)) < 1e-5);
    }
  }
}

TEST_CASE("ties_trim keeps the largest magnitudes") {
  TaskVector tv;
  tv.layers.push_back({"w", {0.1, -3.0, 0.5, 2.0}, {4}});
  const TaskVector out = ties_trim(tv, 0.5);
  const auto expect = oracle_trim(tv.layers[0].values, 0.5);
  CHECK(out.layers[0].values == expect);
  CHECK(out.layers[0].values == std::vector<double>{0.0, -3.0, 0.0, 2.0});

  SUBCASE("density one is the identity") {
    CHECK(ties_trim(tv, 1.0).layers[0].values == tv.layers[0].values);
  }
  SUBCASE("all-zero input stays zero") {
    TaskVector z;
    z.layers.push_back({"w", {0.0, 0.0, 0.0}, {3}});
    CHECK(ties_trim(z, 0.5).layers[0].values == std::vector<double>{0.0, 0.0, 0.0});
  }
  SUBCASE("threshold ties keep the lower index") {
    TaskVector t;
    t.layers.push_back({"w", {1.0, -1.0, 1.0, 1.0}, {4}});
    CHECK(ties_trim(t, 0.5).layers[0].values == std::vector<double>{1.0, -1.0, 0.0, 0.0});
  }
  SUBCASE("density out of range") {
    CHECK_THROWS(ties_trim(tv, 0.0));
    CHECK_THROWS(ties_trim(tv, 1.2));
  }
}

TEST_CASE("ties_elect_sign follows the coordinate sums") {
  TaskVector t1, t2;
  t1.layers.push_back({"w", {1.0, -2.0}, {2}});
  t2.layers.push_back({"w", {3.0, 1.0}, {2}});
  const SignVectors signs = ties_elect_sign({t1, t2});
  CHECK(signs[0][0] == 1);   // 1 + 3 = 4
  CHECK(signs[0][1] == -1);  // -2 + 1 = -1

  SUBCASE("single vector keeps its own signs, zeros take the tie sign") {
    TaskVector t;
    t.layers.push_back({"w", {0.5, 0.0, -0.5}, {3}});
    const SignVectors s = ties_elect_sign({t});
    CHECK(s[0][0] == 1);
    CHECK(s[0][1] == 1);  // default tie sign
    CHECK(s[0][2] == -1);
    CHECK(ties_elect_sign({t}, -1)[0][1] == -1);
  }
  SUBCASE("exact cancellation takes the tie sign") {
    TaskVector p, n;
    p.layers.push_back({"w", {1.0}, {1}});
    n.layers.push_back({"w", {-1.0}, {1}});
    CHECK(ties_elect_sign({p, n})[0][0] == 1);
  }
  SUBCASE("empty list is an error") {
    CHECK_THROWS(ties_elect_sign({}));
  }
}

TEST_CASE("ties_disjoint_merge averages sign-matching entries") {
  TaskVector t1, t2;
  t1.layers.push_back({"w", {1.0, -2.0}, {2}});
  t2.layers.push_back({"w", {3.0, 1.0}, {2}});
  SignVectors signs{{1, -1}};
  const TaskVector out = ties_disjoint_merge({t1, t2}, signs);
  CHECK(out.layers[0].values == std::vector<double>{2.0, -2.0});

  SUBCASE("identical vectors merge to themselves") {
    const TaskVector same = ties_disjoint_merge({t1, t1}, ties_elect_sign({t1, t1}));
    CHECK(same.layers[0].values == t1.layers[0].values);
  }
  SUBCASE("no aligned entries produce zero") {
    TaskVector neg;
    neg.layers.push_back({"w", {-1.0, -2.0}, {2}});
    SignVectors plus{{1, 1}};
    CHECK(ties_disjoint_merge({neg}, plus).layers[0].values ==
          std::vector<double>{0.0, 0.0});
  }
}

TEST_CASE("ties_merge degenerate cases") {
  const LayeredModel base = random_flat(60, 10);
  const LayeredModel m1 = random_flat(61, 10);

  SUBCASE("single model, density one, scale one reproduces the model") {
    CHECK(same_bytes(ties_merge(base, {m1}, TiesConfig{1.0, +1}, {1.0}), m1));
  }
  SUBCASE("models equal to the base leave the base unchanged") {
    CHECK(same_bytes(ties_merge(base, {base, base}, TiesConfig{0.5, +1}, {1.0, 1.0}), base));
  }
  SUBCASE("single model with density one matches task arithmetic at any scale") {
    const TaskVector tv = task_vector(m1, base);
    const LayeredModel via_ta = apply_task_vectors(base, {{0.7, &tv}});
    const LayeredModel via_ties = ties_merge(base, {m1}, TiesConfig{1.0, +1}, {0.7});
    for (size_t c = 0; c < 10; ++c) {
      CHECK(std::fabs(via_ta.layers[0].values[c] - via_ties.layers[0].values[c]) <= 1e-6);
    }
  }
}

TEST_CASE("ties_merge matches the step-by-step oracle") {
  const LayeredModel base = random_flat(70, 10);
  const std::vector<LayeredModel> models{random_flat(71, 10), random_flat(72, 10),
                                         random_flat(73, 10)};
  const std::vector<double> scales{0.9, 0.5, 0.7};
  const LayeredModel merged = ties_merge(base, models, TiesConfig{0.5, +1}, scales);

  std::vector<std::vector<double>> trimmed;
  for (const auto& m : models) trimmed.push_back(oracle_trim(oracle_tau(m, base), 0.5));
  const auto signs = oracle_elect(trimmed, +1);
  const auto expect = oracle_weighted_disjoint(base.layers[0].values, trimmed, signs, scales);
  CHECK(merged.layers[0].values == expect);
}

TEST_CASE("dare_sparsify follows Eq-style drop and rescale") {
  TaskVector tv;
  tv.layers.push_back({"w", {2.0, 4.0}, {2}});

  SUBCASE("p zero is exactly the identity") {
    const TaskVector out = dare_sparsify(tv, DareConfig{0.0, 9, 0, 0});
    CHECK(out.layers[0].values == tv.layers[0].values);
  }
  SUBCASE("recorded mask determines the output") {
    const DareConfig cfg{0.5, 1234, 0, 0};
    const auto mask = dare_mask(cfg, 2);
    const TaskVector out = dare_sparsify(tv, cfg);
    for (size_t c = 0; c < 2; ++c) {
      const double expect = mask[c] ? 0.0 : 2.0 * tv.layers[0].values[c];
      CHECK(out.layers[0].values[c] == expect);
    }
  }
  SUBCASE("p at or above one is rejected") {
    CHECK_THROWS(dare_sparsify(tv, DareConfig{1.0, 1, 0, 0}));
  }
  SUBCASE("deterministic in the seed and stream tag") {
    const TaskVector a = dare_sparsify(tv, DareConfig{0.5, 7, 1, 3});
    const TaskVector b = dare_sparsify(tv, DareConfig{0.5, 7, 1, 3});
    CHECK(a.layers[0].values == b.layers[0].values);
  }
}

TEST_CASE("dare_sparsify is unbiased over many seeds") {
  TaskVector tv;
  tv.layers.push_back({"w", {1.0, -2.0, 3.0}, {3}});
  const double p = 0.7;
  const int n_seeds = 10000;
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  for (int seed = 0; seed < n_seeds; ++seed) {
    const TaskVector out = dare_sparsify(tv, DareConfig{p, static_cast<uint64_t>(seed), 0, 0});
    for (int c = 0; c < 3; ++c) sum[static_cast<size_t>(c)] += out.layers[0].values[c];
  }
  for (int c = 0; c < 3; ++c) {
    const double tau = tv.layers[0].values[c];
    const double se = std::fabs(tau) * std::sqrt(p / ((1.0 - p) * n_seeds));
    CHECK(std::fabs(sum[static_cast<size_t>(c)] / n_seeds - tau) <= 5.0 * se);
  }
}

TEST_CASE("dare merges match their composition oracles") {
  const LayeredModel base = random_flat(80, 12);
  const std::vector<LayeredModel> models{random_flat(81, 12), random_flat(82, 12)};
  const std::vector<double> scales{0.8, 0.6};
  const uint64_t seed = 555;

  SUBCASE("dare_linear_merge") {
    const LayeredModel merged = dare_linear_merge(base, models, 0.5, seed, scales);
    std::vector<float> expect(base.layers[0].values.size());
    std::vector<std::vector<double>> taus;
    for (size_t k = 0; k < models.size(); ++k) {
      taus.push_back(oracle_dare(oracle_tau(models[k], base), 0.5, seed,
                                 static_cast<int>(k), 0));
    }
    for (size_t c = 0; c < expect.size(); ++c) {
      double acc = static_cast<double>(base.layers[0].values[c]);
      for (size_t k = 0; k < taus.size(); ++k) {
        acc += scales[k] * taus[k][c];
      }
      expect[c] = static_cast<float>(acc);
    }
    CHECK(merged.layers[0].values == expect);
  }

  SUBCASE("dare_ties_merge") {
    const TiesConfig tc{0.5, +1};
    const LayeredModel merged = dare_ties_merge(base, models, tc, 0.5, seed, scales);
    std::vector<std::vector<double>> trimmed;
    for (size_t k = 0; k < models.size(); ++k) {
      trimmed.push_back(oracle_trim(
          oracle_dare(oracle_tau(models[k], base), 0.5, seed, static_cast<int>(k), 0), 0.5));
    }
    const auto signs = oracle_elect(trimmed, +1);
    const auto expect =
        oracle_weighted_disjoint(base.layers[0].values, trimmed, signs, scales);
    CHECK(merged.layers[0].values == expect);
  }

  SUBCASE("dare_ties_merge with p zero equals ties_merge bit-exactly") {
    const TiesConfig tc{0.5, +1};
    const LayeredModel with_dare = dare_ties_merge(base, models, tc, 0.0, seed, scales);
    const LayeredModel without = ties_merge(base, models, tc, scales);
    CHECK(same_bytes(with_dare, without));
  }
}

TEST_CASE("merge operators are deterministic functions of inputs and seed") {
  const LayeredModel base = random_flat(90, 10);
  const std::vector<LayeredModel> models{random_flat(91, 10), random_flat(92, 10)};
  const std::vector<double> scales{0.5, 0.5};
  const LayeredModel a = dare_ties_merge(base, models, TiesConfig{0.4, +1}, 0.3, 11, scales);
  const LayeredModel b = dare_ties_merge(base, models, TiesConfig{0.4, +1}, 0.3, 11, scales);
  CHECK(same_bytes(a, b));
}

TEST_CASE("frankenmerge stacks block slices") {
  const toy::Dims dims{.seq_len = 4, .embed = 4, .hidden = 6, .blocks = 8, .slots = 2,
                       .vocab = 10};
  const LayeredModel a = toy::init_model(dims, 1);
  const LayeredModel b = toy::init_model(dims, 2);

  SUBCASE("identity slice reproduces model A") {
    const LayeredModel out = frankenmerge({a, b}, {{0, 0, 8}});
    CHECK(same_bytes(out, a));
    CHECK(out.meta.n_blocks == 8);
  }
  SUBCASE("two slices concatenate") {
    const LayeredModel out = frankenmerge({a, b}, {{0, 0, 4}, {1, 4, 8}});
    CHECK(out.meta.n_blocks == 8);
    const auto split_out = split_layers(out);
    const auto split_a = split_layers(a);
    const auto split_b = split_layers(b);
    for (int blk = 0; blk < 4; ++blk) {
      for (int j = 0; j < 2; ++j) {
        CHECK(out.layers[split_out.blocks[blk][j]].values ==
              a.layers[split_a.blocks[blk][j]].values);
        CHECK(out.layers[split_out.blocks[blk + 4][j]].values ==
              b.layers[split_b.blocks[blk + 4][j]].values);
      }
    }
    // embedding and readout come from the first-listed model
    CHECK(out.layers[split_out.embed[0]].values == a.layers[split_a.embed[0]].values);
    CHECK(out.layers[split_out.readout[0]].values == a.layers[split_a.readout[0]].values);
  }
  SUBCASE("out-of-range slice is an error") {
    CHECK_THROWS(frankenmerge({a, b}, {{0, 0, 9}}));
    CHECK_THROWS(frankenmerge({a, b}, {{2, 0, 4}}));
  }
  SUBCASE("empty slices are an error") {
    CHECK_THROWS(frankenmerge({a, b}, {}));
    CHECK_THROWS(frankenmerge({a, b}, {{0, 3, 3}}));
  }
}
