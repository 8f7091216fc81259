#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fxf/error.hpp"
#include "fxf/metrics.hpp"
#include "test_util.hpp"

using namespace fxf;

TEST_CASE("segmentation metrics") {
  SUBCASE("hand confusion counts on four pixels") {
    // class 0: tp 2, fn 1 -> 4/5; class 1: tp 1, fp 1 -> 2/3
    CHECK(mean_f1({0, 1, 1, 0}, {0, 1, 0, 0}, 2) == doctest::Approx(100.0 * (0.8 + 2.0 / 3.0) / 2.0));
    CHECK(pixel_accuracy({0, 1, 1, 0}, {0, 1, 0, 0}) == doctest::Approx(75.0));
  }
  SUBCASE("perfect prediction") {
    std::vector<std::uint8_t> m{0, 2, 2, 1, 3, 0};
    CHECK(mean_f1(m, m, 4) == doctest::Approx(100.0));
    CHECK(pixel_accuracy(m, m) == doctest::Approx(100.0));
  }
  SUBCASE("classes absent from both maps are left out of the mean") {
    CHECK(mean_f1({0, 0}, {0, 0}, 5) == doctest::Approx(100.0));
  }
  CHECK_THROWS_AS(mean_f1({0}, {0, 1}, 2), ShapeError);
  CHECK_THROWS_AS(mean_f1({3}, {0}, 2), DomainError);
}

TEST_CASE("landmark NME") {
  std::vector<double> target(2 * kNumLandmarks);
  Rng rng(2);
  for (auto& v : target) v = rng.uniform(0.2, 0.8);
  target[2 * 36] = 0.3;
  target[2 * 36 + 1] = 0.4;
  target[2 * 45] = 0.7;
  target[2 * 45 + 1] = 0.4;
  CHECK(landmark_nme(target, target) == 0.0);
  auto shifted = target;
  for (std::size_t k = 0; k < kNumLandmarks; ++k) shifted[2 * k] += 0.02;
  CHECK(landmark_nme(shifted, target) == doctest::Approx(0.02 / 0.4));
  CHECK_THROWS_AS(landmark_nme({0.0}, target), ShapeError);
}

TEST_CASE("head pose MAE") {
  const double deg = std::numbers::pi / 180.0;
  auto id = euler_to_rotation(0, 0, 0);
  CHECK(pose_mae_degrees(id, id) == doctest::Approx(0.0));
  CHECK(pose_mae_degrees(euler_to_rotation(10 * deg, 0, 0), id) == doctest::Approx(10.0 / 3.0));
  CHECK(pose_mae_degrees(euler_to_rotation(10 * deg, -20 * deg, 30 * deg), euler_to_rotation(0, 10 * deg, 0)) ==
        doctest::Approx((10.0 + 30.0 + 30.0) / 3.0));
}

TEST_CASE("verification accuracy") {
  SUBCASE("separable pairs") {
    std::vector<std::vector<double>> e{{1, 0}, {1, 0.1}, {0, 1}, {-1, 0}};
    CHECK(verification_accuracy(e, {0, 0, 1, 2}) == doctest::Approx(100.0));
  }
  SUBCASE("best threshold on overlapping scores") {
    // pairs: (0,1) different at 0.8, (0,2) same at 0, (1,2) different at 0.6
    std::vector<std::vector<double>> e{{1, 0}, {0.8, 0.6}, {0, 1}};
    CHECK(verification_accuracy(e, {0, 1, 0}) == doctest::Approx(200.0 / 3.0));
  }
  CHECK_THROWS_AS(verification_accuracy({{1, 0}}, {0}), DomainError);
}

TEST_CASE("recall at precision") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.5};
  const std::vector<std::uint8_t> y{1, 1, 0, 1, 0};
  CHECK(recall_at_precision(s, y, 0.8) == doctest::Approx(200.0 / 3.0));
  CHECK(recall_at_precision(s, y, 0.75) == doctest::Approx(100.0));
  CHECK(recall_at_precision({0.5, 0.5}, {1, 0}, 0.8) == doctest::Approx(0.0));
  CHECK_THROWS_AS(recall_at_precision({0.1}, {0}, 0.8), DomainError);
}

TEST_CASE("evaluate") {
  ModelConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.decoder.attention = {16, 2};
  cfg.heads.hidden = 16;
  FaceXFormer<double> model(cfg);
  model.initialize(3);

  SUBCASE("untrained gender predictions sit at chance on balanced labels") {
    DatasetMap ds;
    ds[Task::gender] = generate_dataset(cfg.data_spec(), Task::gender, 200, 4);
    const double acc = metric(evaluate(model, ds, 50), Task::gender, "acc");
    // 3.5 binomial standard deviations at n = 200
    CHECK(std::abs(acc - 50.0) <= 3.5 * 100.0 * std::sqrt(0.25 / 200.0));
  }

  SUBCASE("report lists every metric per task") {
    DatasetMap ds;
    for (Task t : kAllTasks) ds[t] = generate_dataset(cfg.data_spec(), t, 4, 1);
    auto report = evaluate(model, ds, 3);
    REQUIRE(report.size() == kNumTasks);
    CHECK(report[0].task == Task::parsing);
    for (const char* k : {"f1", "pixel_acc"}) CHECK(report[0].get(k).has_value());
    CHECK(metric(report, Task::landmarks, "nme") > 0.0);
    CHECK(metric(report, Task::headpose, "mae_deg") > 0.0);
    CHECK(metric(report, Task::age, "mae_years") >= 0.0);
    CHECK(metric(report, Task::recognition, "verification_acc") >= 0.0);
    CHECK(metric(report, Task::visibility, "recall_at_p80") >= 0.0);
    CHECK_THROWS_AS(metric(report, Task::gender, "nme"), std::out_of_range);
  }
}
