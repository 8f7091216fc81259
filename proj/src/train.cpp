#include "fxf/train.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "fxf/error.hpp"

namespace fxf {

namespace {

template <typename T>
Tensor<T> gather(const TaskBatch& batch, const std::vector<std::size_t>& rows, std::size_t width,
                 const std::function<void(const SampleLabels&, T*)>& fill, Shape shape) {
  std::vector<T> buf(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) fill(batch.samples[rows[i]]->labels, buf.data() + i * width);
  return Tensor<T>(std::move(shape), std::move(buf));
}

std::vector<std::size_t> label_of(const TaskBatch& batch, const std::vector<std::size_t>& rows,
                                  std::size_t SampleLabels::*field) {
  std::vector<std::size_t> out;
  for (std::size_t r : rows) out.push_back(batch.samples[r]->labels.*field);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  optimizer.validate();
  weights.validate();
  if (!(margin.scale > 0.0) || !(margin.margin >= 0.0)) throw ConfigError("margin scale must be positive");
  lr_schedule(0, lr, decay_epochs);
}

template <typename T>
std::array<std::optional<Tensor<T>>, kNumTasks> task_losses(const FaceXFormer<T>& model, const TaskBatch& batch,
                                                             const TaskPredictions<T>& preds,
                                                             const MarginConfig& margin) {
  const TaskSelection sel = batch.selection();
  const HeadConfig& h = model.config().heads;
  std::array<std::optional<Tensor<T>>, kNumTasks> out;
  auto rows = [&](Task t) -> const std::vector<std::size_t>& { return sel[task_index(t)]; };

  if (!rows(Task::parsing).empty()) {
    std::vector<std::size_t> target;
    for (std::size_t r : rows(Task::parsing))
      for (std::uint8_t c : batch.samples[r]->labels.parsing) target.push_back(c);
    out[task_index(Task::parsing)] = seg_loss(*preds.parsing, target);
  }
  if (!rows(Task::landmarks).empty()) {
    const auto& rs = rows(Task::landmarks);
    auto target = gather<T>(batch, rs, 2 * kNumLandmarks,
                            [](const SampleLabels& l, T* dst) {
                              for (std::size_t k = 0; k < l.landmarks.size(); ++k) dst[k] = static_cast<T>(l.landmarks[k]);
                            },
                            {rs.size(), kNumLandmarks, 2});
    out[task_index(Task::landmarks)] = landmark_loss(*preds.landmarks, target);
  }
  if (!rows(Task::headpose).empty()) {
    const auto& rs = rows(Task::headpose);
    auto target = gather<T>(batch, rs, 9,
                            [](const SampleLabels& l, T* dst) {
                              for (std::size_t k = 0; k < 9; ++k) dst[k] = static_cast<T>(l.rotation[k]);
                            },
                            {rs.size(), 3, 3});
    out[task_index(Task::headpose)] = geodesic_loss(*preds.headpose, target);
  }
  if (!rows(Task::attributes).empty()) {
    const auto& rs = rows(Task::attributes);
    auto target = gather<T>(batch, rs, h.attributes,
                            [](const SampleLabels& l, T* dst) {
                              for (std::size_t k = 0; k < l.attributes.size(); ++k) dst[k] = static_cast<T>(l.attributes[k]);
                            },
                            {rs.size(), h.attributes});
    out[task_index(Task::attributes)] = bce_with_logits(*preds.attributes, target);
  }
  if (!rows(Task::age).empty()) {
    std::vector<double> ages;
    for (std::size_t r : rows(Task::age)) ages.push_back(batch.samples[r]->labels.age);
    out[task_index(Task::age)] = age_loss(*preds.age, *preds.age_expected, ages, h.max_age);
  }
  if (!rows(Task::gender).empty())
    out[task_index(Task::gender)] = ce_loss(*preds.gender, label_of(batch, rows(Task::gender), &SampleLabels::gender));
  if (!rows(Task::race).empty())
    out[task_index(Task::race)] = ce_loss(*preds.race, label_of(batch, rows(Task::race), &SampleLabels::race));
  if (!rows(Task::expression).empty()) {
    out[task_index(Task::expression)] =
        ce_loss(*preds.expression, label_of(batch, rows(Task::expression), &SampleLabels::expression));
  }
  if (!rows(Task::recognition).empty()) {
    out[task_index(Task::recognition)] =
        margin_softmax_loss(*preds.embedding, label_of(batch, rows(Task::recognition), &SampleLabels::identity),
                            model.class_weights(), margin);
  }
  if (!rows(Task::visibility).empty()) {
    const auto& rs = rows(Task::visibility);
    auto target = gather<T>(batch, rs, h.visibility,
                            [](const SampleLabels& l, T* dst) {
                              for (std::size_t k = 0; k < l.occluded.size(); ++k) dst[k] = static_cast<T>(l.occluded[k]);
                            },
                            {rs.size(), h.visibility});
    out[task_index(Task::visibility)] = bce_with_logits(*preds.visibility, target);
  }
  return out;
}

template <typename T>
LossReport<T> batch_loss(const FaceXFormer<T>& model, const TaskBatch& batch, const LossWeights& weights,
                         const MarginConfig& margin) {
  const TaskPredictions<T> preds = model.forward(batch.images<T>(), batch.selection());
  return joint_loss(task_losses(model, batch, preds, margin), weights);
}

template <typename T>
std::vector<StepRecord> train(FaceXFormer<T>& model, const DatasetMap& datasets, const TrainConfig& cfg,
                              const StepCallback& on_step) {
  cfg.validate();
  BalancedSampler sampler(datasets, cfg.batch_size, cfg.seed);
  AdamW<T> opt(model.params(), cfg.optimizer);
  const std::size_t per_epoch = sampler.batches_per_epoch();
  const std::size_t total = cfg.max_steps != 0 ? cfg.max_steps : cfg.epochs * per_epoch;
  std::vector<StepRecord> log;
  log.reserve(total);
  for (std::size_t step = 0; step < total; ++step) {
    const std::size_t epoch = step / per_epoch;
    const double lr = lr_schedule(epoch, cfg.lr, cfg.decay_epochs);
    const TaskBatch batch = sampler.next();
    model.params().zero_grad();
    const LossReport<T> report = batch_loss(model, batch, cfg.weights, cfg.margin);
    StepRecord rec{step, epoch, lr, report.task, report.total_value()};
    for (Task t : kAllTasks) {
      const auto& v = rec.task[task_index(t)];
      if (v && !std::isfinite(*v)) {
        throw TrainingError("non-finite " + std::string(task_name(t)) + " loss at step " + std::to_string(step));
      }
    }
    if (!std::isfinite(rec.total)) throw TrainingError("non-finite total loss at step " + std::to_string(step));
    backward(report.total);
    opt.step(model.params(), lr, MissingGrad::skip);
    log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return log;
}

void write_metrics_log(std::ostream& out, const std::vector<StepRecord>& log) {
  char buf[160];
  auto line = [&](const StepRecord& r, const char* name, double loss) {
    std::snprintf(buf, sizeof(buf), "step=%zu epoch=%zu task=%s loss=%.17g lr=%.17g\n", r.step, r.epoch, name, loss,
                  r.lr);
    out << buf;
  };
  for (const StepRecord& r : log) {
    for (Task t : kAllTasks) {
      const auto& v = r.task[task_index(t)];
      if (v) line(r, std::string(task_name(t)).c_str(), *v);
    }
    line(r, "total", r.total);
  }
}

#define FXF_INSTANTIATE_TRAIN(T)                                                                              \
  template std::array<std::optional<Tensor<T>>, kNumTasks> task_losses<T>(                                   \
      const FaceXFormer<T>&, const TaskBatch&, const TaskPredictions<T>&, const MarginConfig&);               \
  template LossReport<T> batch_loss<T>(const FaceXFormer<T>&, const TaskBatch&, const LossWeights&,          \
                                       const MarginConfig&);                                                  \
  template std::vector<StepRecord> train<T>(FaceXFormer<T>&, const DatasetMap&, const TrainConfig&,          \
                                            const StepCallback&);

FXF_INSTANTIATE_TRAIN(float)
FXF_INSTANTIATE_TRAIN(double)

}  // namespace fxf
