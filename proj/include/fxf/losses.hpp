#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "fxf/tasks.hpp"
#include "fxf/tensor.hpp"

namespace fxf {

/// Elementwise arccos(clamp(c, -1, 1)). The derivative -1/sqrt(1 - c²) is
/// evaluated at c clamped to ±(1 - eps) so it stays finite at the poles.
template <typename T>
Tensor<T> safe_acos(const Tensor<T>& c, double eps = 1e-7);

/// Elementwise smooth-L1 with threshold beta: 0.5 d²/beta below, |d| - 0.5 beta above.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& d, double beta = 1.0);

/// 2|A∩B| / (|A| + |B|) over binary masks; 1 when both are empty.
double dice_coefficient(const std::vector<int>& pred, const std::vector<int>& target);

/// 0.5 · (1 - mean soft dice over classes, smooth 1) + 0.5 · pixel CE.
/// logits [B, C, H, W]; target holds B·H·W class ids.
template <typename T>
Tensor<T> seg_loss(const Tensor<T>& logits, const std::vector<std::size_t>& target);

/// Smooth-L1 (beta 1) summed over x and y, averaged over landmarks and batch.
template <typename T>
Tensor<T> landmark_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Mean rotation angle between [B, 3, 3] rotation stacks. Both inputs must be
/// rotations within 1e-3, otherwise DomainError.
template <typename T>
Tensor<T> geodesic_loss(const Tensor<T>& r_pred, const Tensor<T>& r_true);

/// Throws DomainError unless every [3, 3] block is orthonormal with det +1
/// within `tol`.
template <typename T>
void require_rotations(const Tensor<T>& r, double tol);

struct MarginConfig {
  double scale = 16.0;
  double margin = 0.2;
};

/// Additive angular margin softmax. embeddings [B, D] must be unit rows;
/// class_weights [N, D] are normalized here.
template <typename T>
Tensor<T> margin_softmax_loss(const Tensor<T>& embeddings, const std::vector<std::size_t>& labels,
                              const Tensor<T>& class_weights, const MarginConfig& cfg);

/// Stable BCE with logits, mean over all entries. Targets must be 0 or 1.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets);

/// Mean cross-entropy of logits [B, K] against class ids.
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

/// Bin of `age` among `bins` equal-width bins over [0, max_age].
std::size_t age_bin(double age, std::size_t bins, double max_age);

/// 0.5 · CE(bin logits, bin(age)) + 0.5 · mean |expected - age| / max_age.
template <typename T>
Tensor<T> age_loss(const Tensor<T>& bin_logits, const Tensor<T>& expected_age, const std::vector<double>& ages,
                   double max_age);

/// λ per loss term; gender and race share one weight.
struct LossWeights {
  double seg = 1.0;
  double lnd = 1.0;
  double hpe = 1.0;
  double attr = 1.0;
  double age = 1.0;
  double gender_race = 1.0;
  double exp = 1.0;
  double fr = 1.0;
  double vis = 1.0;

  /// Throws ConfigError on a negative weight or when all are zero.
  void validate() const;
  double weight(Task t) const;
};

template <typename T>
struct LossReport {
  std::array<std::optional<double>, kNumTasks> task;  // absent tasks stay empty
  Tensor<T> total;

  double total_value() const { return static_cast<double>(total.item()); }
};

/// Σ λ_t L_t over the present tasks. Throws DomainError if none is present.
template <typename T>
LossReport<T> joint_loss(const std::array<std::optional<Tensor<T>>, kNumTasks>& losses, const LossWeights& w);

}  // namespace fxf
