#include "fxf/tasks.hpp"

#include "fxf/error.hpp"

namespace fxf {

namespace {
constexpr std::array<std::string_view, kNumTasks> kNames = {
    "parsing", "landmarks", "headpose", "attributes", "age",
    "gender",  "race",      "expression", "recognition", "visibility",
};
}  // namespace

std::string_view task_name(Task t) { return kNames[task_index(t)]; }

std::optional<Task> parse_task(std::string_view name) {
  for (std::size_t i = 0; i < kNumTasks; ++i)
    if (kNames[i] == name) return kAllTasks[i];
  return std::nullopt;
}

TokenLayout::TokenLayout(std::size_t seg_classes) {
  if (seg_classes == 0) throw ConfigError("segmentation class count must be positive");
  counts_.fill(1);
  counts_[task_index(Task::parsing)] = seg_classes;
  counts_[task_index(Task::landmarks)] = kNumLandmarks;
  counts_[task_index(Task::headpose)] = kNumPoseTokens;
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    offsets_[i] = total_;
    total_ += counts_[i];
  }
}

}  // namespace fxf
