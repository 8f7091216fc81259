#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fxf/data.hpp"
#include "fxf/losses.hpp"
#include "fxf/model.hpp"
#include "fxf/optim.hpp"

namespace fxf {

struct TrainConfig {
  std::size_t batch_size = 20;
  std::size_t epochs = 1;
  /// Stops after this many steps when non-zero, regardless of epochs.
  std::size_t max_steps = 0;
  double lr = 1e-4;
  std::vector<std::size_t> decay_epochs{6, 10};
  AdamWConfig optimizer;
  LossWeights weights;
  MarginConfig margin;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Loss of every task present in `selection`, computed from predictions on
/// the batch rows. Absent tasks stay empty.
template <typename T>
std::array<std::optional<Tensor<T>>, kNumTasks> task_losses(const FaceXFormer<T>& model, const TaskBatch& batch,
                                                             const TaskPredictions<T>& preds,
                                                             const MarginConfig& margin);

/// Forward pass plus weighted joint loss for one batch.
template <typename T>
LossReport<T> batch_loss(const FaceXFormer<T>& model, const TaskBatch& batch, const LossWeights& weights,
                         const MarginConfig& margin);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  std::array<std::optional<double>, kNumTasks> task;
  double total = 0.0;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Joint multi-task training with the balanced sampler and AdamW. Parameters
/// that a batch leaves without gradient are skipped by the optimizer. Throws
/// TrainingError naming the task when a task loss becomes non-finite.
template <typename T>
std::vector<StepRecord> train(FaceXFormer<T>& model, const DatasetMap& datasets, const TrainConfig& cfg,
                              const StepCallback& on_step = {});

/// One line per task loss and one for the total:
///   step=<n> epoch=<e> task=<name|total> loss=<value> lr=<value>
/// Values are written with 17 significant digits.
void write_metrics_log(std::ostream& out, const std::vector<StepRecord>& log);

}  // namespace fxf
