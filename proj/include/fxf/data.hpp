#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "fxf/heads.hpp"
#include "fxf/tasks.hpp"
#include "fxf/tensor.hpp"

namespace fxf {

/// Parsing regions in priority order. Classes at or above the configured
/// class count fold into skin, except hair which folds into background.
enum class Region : std::uint8_t { background, skin, eyes, mouth, nose, brows, hair };
inline constexpr std::size_t kNumRegions = 7;

/// Landmark groups used as visibility targets (iBUG 68-point ordering).
inline constexpr std::size_t kNumLandmarkGroups = 8;

struct DataSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  HeadConfig heads;

  /// Throws ConfigError for image sizes that are not positive multiples of 32,
  /// fewer than 2 or more than 7 parsing classes, or a visibility count other
  /// than the number of landmark groups.
  void validate() const;
};

/// Render parameters of one synthetic face. Everything else about a sample is
/// a function of these values.
struct FaceParams {
  double cx = 0.5, cy = 0.5;  // face center, normalized image coordinates
  double size = 0.35;         // half face height, normalized
  double yaw = 0.0, pitch = 0.0, roll = 0.0;  // radians
  double age = 30.0;
  std::size_t gender = 0;
  std::size_t race = 0;
  std::size_t expression = 0;
  std::size_t identity = 0;
  std::vector<std::uint8_t> attributes;
  std::vector<std::uint8_t> occluded;  // one flag per landmark group
};

struct SampleLabels {
  std::vector<std::uint8_t> parsing;  // H·W class ids, row-major
  std::vector<double> landmarks;      // 68 (x, y) pairs in [0, 1]
  std::array<double, 9> rotation{};   // row-major
  std::vector<std::uint8_t> attributes;
  double age = 0.0;
  std::size_t gender = 0;
  std::size_t race = 0;
  std::size_t expression = 0;
  std::size_t identity = 0;
  std::vector<std::uint8_t> occluded;
};

/// One rendered face. Every label field is filled; `task` names the one that
/// supervises the sample.
struct SyntheticSample {
  Task task = Task::parsing;
  std::uint64_t index = 0;
  FaceParams params;
  std::size_t height = 0, width = 0;
  std::vector<double> image;  // [3, H, W]
  SampleLabels labels;
};

/// Rz(roll) · Ry(yaw) · Rx(pitch), row-major.
std::array<double, 9> euler_to_rotation(double yaw, double pitch, double roll);

/// Inverse of euler_to_rotation for |yaw| < 90°: returns (yaw, pitch, roll).
std::array<double, 3> rotation_to_euler(const std::array<double, 9>& r);

/// Landmark indices belonging to a visibility group.
const std::vector<std::size_t>& landmark_group(std::size_t group);

/// Renders a sample from explicit parameters.
SyntheticSample render_sample(const DataSpec& spec, const FaceParams& params, Task task);

/// Samples `size` faces for `task`. Sample i depends only on (task, seed, i).
/// Categorical labels of the task cycle through every class as i grows, and
/// identities of recognition samples come in consecutive pairs.
/// Throws ConfigError for size 0.
std::vector<SyntheticSample> generate_dataset(const DataSpec& spec, Task task, std::size_t size, std::uint64_t seed);

using DatasetMap = std::map<Task, std::vector<SyntheticSample>>;

/// One batch: rows grouped by task in Task order.
struct TaskBatch {
  std::vector<const SyntheticSample*> samples;

  std::size_t size() const { return samples.size(); }
  /// Row indices per task, in row order.
  TaskSelection selection() const;
  /// Pixels [B, 3, H, W], each row centered as (value - 0.5) / 0.25.
  template <typename T>
  Tensor<T> images() const;
};

/// Equal per-task representation in every batch. Each task keeps its own
/// shuffled order and reshuffles whenever it runs out, so small datasets are
/// cycled. An epoch is the number of batches needed to visit the largest
/// dataset once.
class BalancedSampler {
 public:
  /// Throws ConfigError if the map is empty, a dataset is empty, or the batch
  /// size is not a positive multiple of the number of tasks.
  BalancedSampler(const DatasetMap& datasets, std::size_t batch_size, std::uint64_t seed);

  TaskBatch next();
  std::size_t per_task() const { return per_task_; }
  std::size_t batches_per_epoch() const { return batches_per_epoch_; }

 private:
  struct Stream {
    const std::vector<SyntheticSample>* data;
    std::vector<std::size_t> order;
    std::size_t cursor;
  };
  std::vector<Stream> streams_;
  std::size_t per_task_ = 0;
  std::size_t batches_per_epoch_ = 0;
  Rng rng_;
};

}  // namespace fxf
