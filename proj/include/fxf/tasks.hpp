#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace fxf {

enum class Task {
  parsing,
  landmarks,
  headpose,
  attributes,
  age,
  gender,
  race,
  expression,
  recognition,
  visibility,
};

inline constexpr std::size_t kNumTasks = 10;
inline constexpr std::size_t kNumLandmarks = 68;
inline constexpr std::size_t kNumPoseTokens = 9;

inline constexpr std::array<Task, kNumTasks> kAllTasks = {
    Task::parsing, Task::landmarks, Task::headpose,   Task::attributes,  Task::age,
    Task::gender,  Task::race,      Task::expression, Task::recognition, Task::visibility,
};

constexpr std::size_t task_index(Task t) { return static_cast<std::size_t>(t); }

std::string_view task_name(Task t);
std::optional<Task> parse_task(std::string_view name);

/// Partition of the task-token table: per task a contiguous block of rows.
/// Counts are (C_seg, 68, 9, 1, 1, 1, 1, 1, 1, 1) in Task order.
class TokenLayout {
 public:
  explicit TokenLayout(std::size_t seg_classes);

  std::size_t count(Task t) const { return counts_[task_index(t)]; }
  std::size_t offset(Task t) const { return offsets_[task_index(t)]; }
  std::size_t total() const { return total_; }

 private:
  std::array<std::size_t, kNumTasks> counts_{};
  std::array<std::size_t, kNumTasks> offsets_{};
  std::size_t total_ = 0;
};

}  // namespace fxf
