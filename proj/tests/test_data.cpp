#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "fxf/data.hpp"
#include "fxf/error.hpp"
#include "fxf/losses.hpp"
#include "test_util.hpp"

using namespace fxf;

namespace {

using Mat3 = std::array<double, 9>;

Mat3 mul3(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return r;
}

// Elementary rotations composed by matrix product.
Mat3 compose(double yaw, double pitch, double roll) {
  const double cy = std::cos(yaw), sy = std::sin(yaw), cp = std::cos(pitch), sp = std::sin(pitch);
  const double cr = std::cos(roll), sr = std::sin(roll);
  const Mat3 rz{cr, -sr, 0, sr, cr, 0, 0, 0, 1};
  const Mat3 ry{cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  const Mat3 rx{1, 0, 0, 0, cp, -sp, 0, sp, cp};
  return mul3(rz, mul3(ry, rx));
}

DataSpec small_spec() {
  DataSpec s;
  s.height = 32;
  s.width = 32;
  return s;
}

}  // namespace

TEST_CASE("rotation helpers") {
  SUBCASE("euler_to_rotation matches the composed elementary rotations") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      double y = rng.uniform(-1.4, 1.4), p = rng.uniform(-3, 3), r = rng.uniform(-3, 3);
      testing::check_close(euler_to_rotation(y, p, r), [&] {
        auto m = compose(y, p, r);
        return std::vector<double>(m.begin(), m.end());
      }(), 1e-12);
    }
  }
  SUBCASE("rotation_to_euler inverts it away from gimbal lock") {
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
      double y = rng.uniform(-1.4, 1.4), p = rng.uniform(-3, 3), r = rng.uniform(-3, 3);
      auto e = rotation_to_euler(euler_to_rotation(y, p, r));
      CHECK(e[0] == doctest::Approx(y).epsilon(1e-10));
      CHECK(e[1] == doctest::Approx(p).epsilon(1e-10));
      CHECK(e[2] == doctest::Approx(r).epsilon(1e-10));
    }
  }
}

TEST_CASE("generate_dataset") {
  const DataSpec spec = small_spec();

  SUBCASE("same task, size and seed give identical samples") {
    auto a = generate_dataset(spec, Task::landmarks, 5, 11);
    auto b = generate_dataset(spec, Task::landmarks, 5, 11);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].image == b[i].image);
      CHECK(a[i].labels.landmarks == b[i].labels.landmarks);
      CHECK(a[i].labels.parsing == b[i].labels.parsing);
    }
    auto c = generate_dataset(spec, Task::landmarks, 5, 12);
    CHECK(a[0].image != c[0].image);
  }

  SUBCASE("a sample depends only on its index") {
    auto shortset = generate_dataset(spec, Task::age, 3, 5);
    auto longset = generate_dataset(spec, Task::age, 9, 5);
    for (std::size_t i = 0; i < shortset.size(); ++i) CHECK(shortset[i].image == longset[i].image);
  }

  SUBCASE("stored rotation is the rendered pose") {
    for (const auto& s : generate_dataset(spec, Task::headpose, 20, 2)) {
      const auto& p = s.params;
      auto want = compose(p.yaw, p.pitch, p.roll);
      for (std::size_t k = 0; k < 9; ++k) CHECK(std::abs(s.labels.rotation[k] - want[k]) < 1e-6);
      auto e = rotation_to_euler(s.labels.rotation);
      CHECK(std::abs(e[0] - p.yaw) < 1e-6);
      CHECK(std::abs(e[1] - p.pitch) < 1e-6);
      CHECK(std::abs(e[2] - p.roll) < 1e-6);
    }
  }

  SUBCASE("parsing masks partition the image") {
    DataSpec rich = spec;
    rich.heads.seg_classes = 7;
    std::set<std::uint8_t> seen;
    for (const auto& s : generate_dataset(rich, Task::parsing, 10, 3)) {
      REQUIRE(s.labels.parsing.size() == 32 * 32);
      std::vector<std::size_t> per_class(7, 0);
      for (auto c : s.labels.parsing) {
        REQUIRE(c < 7);
        ++per_class[c];
        seen.insert(c);
      }
      std::size_t covered = 0;
      for (auto n : per_class) covered += n;
      CHECK(covered == 32 * 32);
    }
    CHECK(seen.size() == 7);
  }

  SUBCASE("extra regions fold into the configured classes") {
    for (const auto& s : generate_dataset(spec, Task::parsing, 4, 3))
      for (auto c : s.labels.parsing) CHECK(c < spec.heads.seg_classes);
  }

  SUBCASE("categorical labels cover their label space") {
    const HeadConfig& h = spec.heads;
    auto count = [&](Task t, std::size_t n, auto field) {
      std::set<std::size_t> v;
      for (const auto& s : generate_dataset(spec, t, n, 9)) v.insert(field(s.labels));
      return v.size();
    };
    CHECK(count(Task::gender, 4, [](const SampleLabels& l) { return l.gender; }) == 2);
    CHECK(count(Task::race, h.races, [](const SampleLabels& l) { return l.race; }) == h.races);
    CHECK(count(Task::expression, h.expressions, [](const SampleLabels& l) { return l.expression; }) ==
          h.expressions);
    CHECK(count(Task::age, h.age_bins, [&](const SampleLabels& l) { return age_bin(l.age, h.age_bins, h.max_age); }) ==
          h.age_bins);
    CHECK(count(Task::recognition, 2 * h.num_identities, [](const SampleLabels& l) { return l.identity; }) ==
          h.num_identities);
  }

  SUBCASE("recognition identities come in pairs") {
    auto d = generate_dataset(spec, Task::recognition, 8, 1);
    for (std::size_t i = 0; i < d.size(); i += 2) CHECK(d[i].labels.identity == d[i + 1].labels.identity);
  }

  SUBCASE("occluders only appear in visibility samples") {
    std::size_t flags = 0;
    for (const auto& s : generate_dataset(spec, Task::visibility, 8, 1))
      for (auto o : s.labels.occluded) flags += o;
    CHECK(flags > 0);
    for (const auto& s : generate_dataset(spec, Task::attributes, 8, 1))
      for (auto o : s.labels.occluded) CHECK(o == 0);
  }

  SUBCASE("landmarks stay inside the image and eyes sit above the mouth") {
    for (const auto& s : generate_dataset(spec, Task::landmarks, 10, 6)) {
      const auto& l = s.labels.landmarks;
      REQUIRE(l.size() == 2 * kNumLandmarks);
      for (double v : l) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
      // in the face frame the eyes are above the mouth; undo roll to compare
      const double c = std::cos(-s.params.roll), sn = std::sin(-s.params.roll);
      auto frame_y = [&](std::size_t k) { return sn * (l[2 * k] - 0.5) + c * (l[2 * k + 1] - 0.5); };
      CHECK(frame_y(36) < frame_y(51));
    }
  }

  SUBCASE("rendered pixels are valid colors") {
    for (const auto& s : generate_dataset(spec, Task::visibility, 3, 6)) {
      REQUIRE(s.image.size() == 3 * 32 * 32);
      for (double v : s.image) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  SUBCASE("contract violations") {
    CHECK_THROWS_AS(generate_dataset(spec, Task::age, 0, 1), ConfigError);
    DataSpec bad = spec;
    bad.height = 48;
    CHECK_THROWS_AS(generate_dataset(bad, Task::age, 1, 1), ConfigError);
    bad = spec;
    bad.heads.seg_classes = 8;
    CHECK_THROWS_AS(generate_dataset(bad, Task::parsing, 1, 1), ConfigError);
    bad = spec;
    bad.heads.visibility = 29;
    CHECK_THROWS_AS(generate_dataset(bad, Task::visibility, 1, 1), ConfigError);
  }
}

TEST_CASE("landmark groups") {
  std::set<std::size_t> all;
  for (std::size_t g = 0; g < kNumLandmarkGroups; ++g)
    for (std::size_t i : landmark_group(g)) all.insert(i);
  CHECK(all.size() == kNumLandmarks);
  CHECK_THROWS_AS(landmark_group(kNumLandmarkGroups), DomainError);
}

TEST_CASE("balanced sampler") {
  const DataSpec spec = small_spec();

  SUBCASE("3 and 100 samples, B = 8: four of each in every batch") {
    DatasetMap ds;
    ds[Task::gender] = generate_dataset(spec, Task::gender, 3, 1);
    ds[Task::race] = generate_dataset(spec, Task::race, 100, 1);
    BalancedSampler sampler(ds, 8, 42);
    CHECK(sampler.per_task() == 4);
    CHECK(sampler.batches_per_epoch() == 25);
    std::map<const SyntheticSample*, std::size_t> small_uses;
    for (int b = 0; b < 30; ++b) {
      TaskBatch batch = sampler.next();
      REQUIRE(batch.size() == 8);
      auto sel = batch.selection();
      CHECK(sel[task_index(Task::gender)] == std::vector<std::size_t>{0, 1, 2, 3});
      CHECK(sel[task_index(Task::race)] == std::vector<std::size_t>{4, 5, 6, 7});
      for (std::size_t r : sel[task_index(Task::gender)]) ++small_uses[batch.samples[r]];
    }
    // 120 draws cycle the 3 samples exactly 40 times each
    REQUIRE(small_uses.size() == 3);
    for (const auto& [s, n] : small_uses) CHECK(n == 40);
  }

  SUBCASE("the largest dataset is visited once per epoch") {
    DatasetMap ds;
    ds[Task::gender] = generate_dataset(spec, Task::gender, 2, 1);
    ds[Task::race] = generate_dataset(spec, Task::race, 12, 1);
    BalancedSampler sampler(ds, 4, 7);
    REQUIRE(sampler.batches_per_epoch() == 6);
    std::set<const SyntheticSample*> seen;
    for (std::size_t b = 0; b < sampler.batches_per_epoch(); ++b) {
      TaskBatch batch = sampler.next();
      const TaskSelection sel = batch.selection();
      for (std::size_t r : sel[task_index(Task::race)]) seen.insert(batch.samples[r]);
    }
    CHECK(seen.size() == 12);
  }

  SUBCASE("one task fills the whole batch") {
    DatasetMap ds;
    ds[Task::age] = generate_dataset(spec, Task::age, 5, 1);
    BalancedSampler sampler(ds, 8, 1);
    TaskBatch batch = sampler.next();
    CHECK(batch.selection()[task_index(Task::age)].size() == 8);
  }

  SUBCASE("per-task counts are equal over 100 batches of all ten tasks") {
    DatasetMap ds;
    std::size_t n = 1;
    for (Task t : kAllTasks) ds[t] = generate_dataset(spec, t, n++, 5);
    BalancedSampler sampler(ds, 20, 3);
    std::array<std::size_t, kNumTasks> counts{};
    for (int b = 0; b < 100; ++b) {
      auto sel = sampler.next().selection();
      for (Task t : kAllTasks) counts[task_index(t)] += sel[task_index(t)].size();
    }
    for (auto c : counts) CHECK(c == 200);
  }

  SUBCASE("same seed gives the same batches") {
    DatasetMap ds;
    ds[Task::gender] = generate_dataset(spec, Task::gender, 5, 1);
    ds[Task::race] = generate_dataset(spec, Task::race, 9, 1);
    BalancedSampler a(ds, 4, 9), b(ds, 4, 9);
    for (int i = 0; i < 10; ++i) CHECK(a.next().samples == b.next().samples);
  }

  SUBCASE("contract violations") {
    DatasetMap ds;
    ds[Task::gender] = generate_dataset(spec, Task::gender, 3, 1);
    ds[Task::race] = generate_dataset(spec, Task::race, 3, 1);
    CHECK_THROWS_AS(BalancedSampler(ds, 7, 1), ConfigError);
    CHECK_THROWS_AS(BalancedSampler(ds, 0, 1), ConfigError);
    CHECK_THROWS_AS(BalancedSampler(DatasetMap{}, 8, 1), ConfigError);
    ds[Task::age] = {};
    CHECK_THROWS_AS(BalancedSampler(ds, 6, 1), ConfigError);
  }
}

TEST_CASE("batch images") {
  const DataSpec spec = small_spec();
  auto d = generate_dataset(spec, Task::gender, 2, 1);
  TaskBatch batch{{&d[0], &d[1]}};
  auto img = batch.images<double>();
  CHECK(img.shape() == Shape{2, 3, 32, 32});
  CHECK(img[0] == doctest::Approx((d[0].image[0] - 0.5) / 0.25));
  CHECK(img[3 * 32 * 32 + 5] == doctest::Approx((d[1].image[5] - 0.5) / 0.25));
  CHECK_THROWS_AS(TaskBatch{}.images<float>(), ShapeError);
}
