#include <doctest.h>

#include <cmath>
#include <limits>
#include <regex>
#include <sstream>

#include "fxf/error.hpp"
#include "fxf/train.hpp"
#include "model_util.hpp"

using namespace fxf;
using fxf::testing::param_values;
using fxf::testing::tiny_datasets;
using fxf::testing::tiny_model_config;

namespace {

std::string log_text(const std::vector<StepRecord>& log) {
  std::ostringstream os;
  write_metrics_log(os, log);
  return os.str();
}

TrainConfig quick_config(std::size_t steps) {
  TrainConfig tc;
  tc.batch_size = 10;
  tc.max_steps = steps;
  tc.lr = 1e-3;
  return tc;
}

}  // namespace

TEST_CASE("training runs are reproducible") {
  const ModelConfig cfg = tiny_model_config();
  const auto ds = tiny_datasets(cfg, 2, 4);
  auto run = [&] {
    FaceXFormer<float> m(cfg);
    m.initialize(8);
    auto log = train(m, ds, quick_config(3));
    return std::pair{log_text(log), param_values(m)};
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);

  FaceXFormer<float> m(cfg);
  m.initialize(8);
  auto tc = quick_config(3);
  tc.seed = 1;
  CHECK(log_text(train(m, ds, tc)) != a.first);
}

TEST_CASE("zero steps leave the initialization untouched") {
  const ModelConfig cfg = tiny_model_config();
  const auto ds = tiny_datasets(cfg, 2, 4);
  FaceXFormer<double> m(cfg);
  m.initialize(2);
  const auto init = param_values(m);
  TrainConfig tc = quick_config(0);
  tc.epochs = 0;
  CHECK(train(m, ds, tc).empty());
  CHECK(param_values(m) == init);
}

TEST_CASE("step records") {
  const ModelConfig cfg = tiny_model_config();
  const auto ds = tiny_datasets(cfg, 2, 4);
  FaceXFormer<double> m(cfg);
  m.initialize(2);
  TrainConfig tc = quick_config(0);
  tc.epochs = 2;
  tc.decay_epochs = {1};
  std::size_t seen = 0;
  const auto log = train(m, ds, tc, [&](const StepRecord& r) { CHECK(r.step == seen++); });
  // 2 samples per task, 1 per task per batch
  REQUIRE(log.size() == 4);
  CHECK(seen == 4);
  CHECK(log[1].epoch == 0);
  CHECK(log[2].epoch == 1);
  CHECK(log[1].lr == 1e-3);
  CHECK(log[2].lr == doctest::Approx(1e-4));
  for (const auto& r : log) {
    double sum = 0.0;
    for (Task t : kAllTasks) {
      REQUIRE(r.task[task_index(t)].has_value());
      sum += tc.weights.weight(t) * *r.task[task_index(t)];
    }
    CHECK(r.total == doctest::Approx(sum).epsilon(1e-9));
  }

  SUBCASE("metrics log format") {
    const std::string text = log_text(log);
    std::istringstream in(text);
    std::string line;
    std::size_t lines = 0;
    const std::regex pattern(R"(step=\d+ epoch=\d+ task=[a-z]+ loss=\S+ lr=\S+)");
    while (std::getline(in, line)) {
      CHECK_MESSAGE(std::regex_match(line, pattern), line);
      ++lines;
    }
    CHECK(lines == log.size() * (kNumTasks + 1));
    CHECK(text.find("step=2 epoch=1 task=total loss=") != std::string::npos);
    CHECK(text.find("task=recognition") != std::string::npos);
    // 17 significant digits make the values round-trip
    const auto pos = text.find("loss=") + 5;
    CHECK(std::stod(text.substr(pos, text.find(' ', pos) - pos)) == *log[0].task[0]);
  }
}

TEST_CASE("a non-finite task loss aborts training and names the task") {
  const ModelConfig cfg = tiny_model_config();
  const auto ds = tiny_datasets(cfg, 2, 4);
  FaceXFormer<double> m(cfg);
  m.initialize(2);
  for (const auto& e : m.params().entries()) {
    if (e.name == "head.age.fc2.bias") {
      Tensor<double> t = e.tensor;
      t.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  std::string msg;
  try {
    train(m, ds, quick_config(2));
  } catch (const TrainingError& e) {
    msg = e.what();
  }
  CHECK(msg.find("age") != std::string::npos);
  CHECK(msg.find("step 0") != std::string::npos);
}

TEST_CASE("single-task overfit") {
  // eight samples, full batch each step
  const ModelConfig cfg = tiny_model_config();
  DatasetMap ds;
  ds[Task::headpose] = generate_dataset(cfg.data_spec(), Task::headpose, 8, 2);
  FaceXFormer<float> m(cfg);
  m.initialize(3);
  TrainConfig tc = quick_config(300);
  tc.batch_size = 8;
  const auto log = train(m, ds, tc);
  CHECK(log.back().total <= 0.1 * log.front().total);
}

TEST_CASE("invalid training configs") {
  const ModelConfig cfg = tiny_model_config();
  const auto ds = tiny_datasets(cfg, 2, 4);
  FaceXFormer<float> m(cfg);
  TrainConfig tc = quick_config(1);
  tc.batch_size = 7;
  CHECK_THROWS_AS(train(m, ds, tc), ConfigError);
  tc = quick_config(1);
  tc.lr = 0.0;
  CHECK_THROWS_AS(train(m, ds, tc), ConfigError);
  tc = quick_config(1);
  tc.decay_epochs = {5, 2};
  CHECK_THROWS_AS(train(m, ds, tc), ConfigError);
}
