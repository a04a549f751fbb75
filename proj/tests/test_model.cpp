#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "evomerge/checkpoint.hpp"
#include "evomerge/model.hpp"
#include "evomerge/rng.hpp"

using namespace evomerge;

namespace {

LayeredModel small_model(uint64_t seed, int n_layers = 3, int layer_size = 8) {
  Rng rng(seed);
  LayeredModel m;
  m.meta.arch_id = "flat-test";
  m.meta.seed = seed;
  for (int l = 0; l < n_layers; ++l) {
    Layer layer;
    layer.name = "w" + std::to_string(l);
    layer.shape = {layer_size};
    layer.values.resize(static_cast<size_t>(layer_size));
    for (auto& v : layer.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    m.layers.push_back(std::move(layer));
  }
  return m;
}

LayeredModel flat(std::vector<float> values) {
  LayeredModel m;
  m.meta.arch_id = "flat-test";
  Layer l;
  l.name = "w";
  l.shape = {static_cast<int64_t>(values.size())};
  l.values = std::move(values);
  m.layers.push_back(std::move(l));
  return m;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

bool same_bytes(const LayeredModel& a, const LayeredModel& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].values.size() != b.layers[i].values.size()) return false;
    for (size_t j = 0; j < a.layers[i].values.size(); ++j) {
      if (std::memcmp(&a.layers[i].values[j], &b.layers[i].values[j], 4) != 0) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  const auto path = temp_path("roundtrip.evmg");
  const LayeredModel m = small_model(7);
  save_checkpoint(m, path);
  const LayeredModel back = load_checkpoint(path);
  CHECK(same_bytes(m, back));
  CHECK(back.meta.arch_id == m.meta.arch_id);
  CHECK(back.meta.seed == m.meta.seed);
  CHECK(fingerprint(back) == fingerprint(m));
}

TEST_CASE("checkpoint round-trip holds across 100 seeds") {
  const auto path = temp_path("roundtrip_many.evmg");
  for (uint64_t seed = 1; seed <= 100; ++seed) {
    const LayeredModel m = small_model(seed, 2, 5);
    save_checkpoint(m, path);
    CHECK(same_bytes(m, load_checkpoint(path)));
  }
}

TEST_CASE("save refuses NaN and empty models") {
  LayeredModel bad = small_model(1);
  bad.layers[1].values[2] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS(save_checkpoint(bad, temp_path("bad.evmg")));

  LayeredModel empty;
  empty.meta.arch_id = "flat-test";
  CHECK_THROWS_WITH_AS(save_checkpoint(empty, temp_path("empty.evmg")), "no layers",
                       std::invalid_argument);
}

TEST_CASE("load rejects bad magic and truncated payloads") {
  const auto path = temp_path("mangled.evmg");
  save_checkpoint(small_model(3), path);

  SUBCASE("wrong magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS(load_checkpoint(path));
  }
  SUBCASE("truncated payload") {
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 5);
    CHECK_THROWS(load_checkpoint(path));
  }
  SUBCASE("missing file") { CHECK_THROWS(load_checkpoint(temp_path("nope.evmg"))); }
}

TEST_CASE("task_vector is the elementwise difference") {
  const LayeredModel ft = flat({1.0f, 2.0f});
  const LayeredModel base = flat({1.0f, 1.0f});
  const TaskVector tv = task_vector(ft, base);
  CHECK(tv.layers[0].values[0] == 0.0f);
  CHECK(tv.layers[0].values[1] == 1.0f);
  CHECK(tv.base_fingerprint == fingerprint(base));

  const TaskVector zero = task_vector(base, base);
  CHECK(zero.layers[0].values[0] == 0.0f);
  CHECK(zero.layers[0].values[1] == 0.0f);

  LayeredModel other = flat({1.0f, 1.0f, 1.0f});
  CHECK_THROWS(task_vector(ft, other));
}

TEST_CASE("apply_task_vectors sums scaled deltas") {
  const LayeredModel base = flat({0.0f, 0.0f});
  const TaskVector t1 = task_vector(flat({1.0f, 0.0f}), base);
  const TaskVector t2 = task_vector(flat({0.0f, 2.0f}), base);
  const LayeredModel out = apply_task_vectors(base, {{1.0, &t1}, {0.5, &t2}});
  CHECK(out.layers[0].values[0] == 1.0f);
  CHECK(out.layers[0].values[1] == 1.0f);

  SUBCASE("empty pair list returns the base unchanged") {
    const LayeredModel same = apply_task_vectors(base, {});
    CHECK(same_bytes(same, base));
  }
}

TEST_CASE("task_vector then apply at scale 1 reconstructs the model exactly") {
  for (uint64_t seed : {11u, 22u, 33u, 44u}) {
    const LayeredModel base = small_model(seed);
    const LayeredModel ft = small_model(seed + 1000);
    const TaskVector tv = task_vector(ft, base);
    const LayeredModel back = apply_task_vectors(base, {{1.0, &tv}});
    CHECK(same_bytes(back, ft));
  }
}

TEST_CASE("apply_task_vectors is linear within tolerance") {
  const LayeredModel base = small_model(5);
  const TaskVector tv = task_vector(small_model(6), base);
  const LayeredModel two_step =
      apply_task_vectors(apply_task_vectors(base, {{0.3, &tv}}), {{0.4, &tv}}, true);
  const LayeredModel one_step = apply_task_vectors(base, {{0.7, &tv}});
  for (size_t l = 0; l < base.layers.size(); ++l) {
    for (size_t j = 0; j < base.layers[l].values.size(); ++j) {
      CHECK(std::fabs(two_step.layers[l].values[j] - one_step.layers[l].values[j]) <= 1e-6);
    }
  }
}

TEST_CASE("fingerprint mismatch is rejected unless overridden") {
  const LayeredModel base = small_model(1);
  const LayeredModel other_base = small_model(2);
  const TaskVector tv = task_vector(small_model(3), other_base);
  CHECK_THROWS(apply_task_vectors(base, {{1.0, &tv}}));
  CHECK_NOTHROW(apply_task_vectors(base, {{1.0, &tv}}, /*allow_foreign_base=*/true));
}

TEST_CASE("validate_model enforces invariants") {
  LayeredModel dup = small_model(1, 2);
  dup.layers[1].name = dup.layers[0].name;
  CHECK_THROWS(validate_model(dup));

  LayeredModel short_values = small_model(1);
  short_values.layers[0].values.pop_back();
  CHECK_THROWS(validate_model(short_values));
}

TEST_CASE("merge compatibility requires arch, names, and shapes") {
  const LayeredModel a = small_model(1);
  CHECK(merge_compatible(a, small_model(2)));
  LayeredModel renamed = small_model(2);
  renamed.layers[0].name = "other";
  CHECK_FALSE(merge_compatible(a, renamed));
  LayeredModel reshaped = small_model(2);
  reshaped.layers[0].shape = {2, 4};
  CHECK_FALSE(merge_compatible(a, reshaped));
}
