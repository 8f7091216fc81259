#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fxf/data.hpp"
#include "fxf/model.hpp"

namespace fxf {

/// Per-class F1 over all pixels, averaged over the classes that occur in
/// either map, in percent. Throws ShapeError on size mismatch.
double mean_f1(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target, std::size_t classes);

/// Fraction of matching entries, in percent.
double pixel_accuracy(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target);

/// Mean point distance divided by the outer-eye-corner distance (points 36
/// and 45). Both inputs hold 68 (x, y) pairs.
double landmark_nme(const std::vector<double>& pred, const std::vector<double>& target);

/// Mean absolute difference of (yaw, pitch, roll) in degrees.
double pose_mae_degrees(const std::array<double, 9>& pred, const std::array<double, 9>& target);

/// Best accuracy of "same identity iff cosine >= t" over all thresholds t,
/// across every unordered pair, in percent. Throws DomainError with fewer
/// than two embeddings.
double verification_accuracy(const std::vector<std::vector<double>>& embeddings,
                             const std::vector<std::size_t>& identities);

/// Largest recall among the score thresholds whose precision reaches
/// `precision`, in percent; 0 if none does. Throws DomainError without
/// positive labels.
double recall_at_precision(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                           double precision);

struct TaskMetrics {
  Task task = Task::parsing;
  std::vector<std::pair<std::string, double>> values;

  std::optional<double> get(const std::string& name) const;
};

/// Metrics per task present in `datasets`, in Task order:
///   parsing      f1, pixel_acc
///   landmarks    nme
///   headpose     mae_deg
///   attributes   acc
///   age          mae_years, bin_acc
///   gender, race, expression  acc
///   recognition  verification_acc, identity_acc
///   visibility   recall_at_p80, acc
/// Percentages except nme, mae_deg and mae_years.
template <typename T>
std::vector<TaskMetrics> evaluate(const FaceXFormer<T>& model, const DatasetMap& datasets, std::size_t batch = 16);

/// Looks up one metric; throws std::out_of_range if absent.
double metric(const std::vector<TaskMetrics>& report, Task task, const std::string& name);

}  // namespace fxf
