#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fxf/decoder.hpp"
#include "fxf/nn.hpp"
#include "fxf/tasks.hpp"
#include "fxf/tensor.hpp"

namespace fxf {

struct HeadConfig {
  std::size_t seg_classes = 4;
  std::size_t age_bins = 8;
  double max_age = 80.0;
  std::size_t races = 4;
  std::size_t expressions = 7;
  std::size_t visibility = 8;
  std::size_t attributes = 40;
  std::size_t embed_dim = 32;
  std::size_t num_identities = 16;
  std::size_t heatmap_side = 8;
  std::size_t hidden = 64;

  /// Throws ConfigError on zero cardinalities or heatmap_side < 4.
  void validate() const;
  /// Centers of the equal-width age bins over [0, max_age].
  std::vector<double> age_bin_centers() const;
  std::size_t classes(Task t) const;
};

/// Nearest rotation to each M [B, 3, 3] in Frobenius norm:
/// U diag(1, 1, det(U Vᵀ)) Vᵀ. Throws DomainError for rank < 3.
template <typename T>
Tensor<T> project_to_so3(const Tensor<T>& m);

/// Softmax over heatmap logits [.., h*h] and expectation over grid points
/// (col / (h-1), row / (h-1)); returns [.., 2] as (x, y).
template <typename T>
Tensor<T> soft_argmax(const Tensor<T>& heatmap_logits, std::size_t side);

/// Segmentation logits [B, C, H, W] from tokens [B, C, D] and face [B, h*w, D]:
/// per-pixel inner products of the upsampled face map with each token.
/// Computed at stride 4 and then resized; the resize is linear so the order
/// does not change the result.
template <typename T>
Tensor<T> parsing_logits(const Tensor<T>& seg_tokens, const Tensor<T>& face, std::size_t height, std::size_t width);

/// x / sqrt(|x|² + eps) along the last axis.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(1e-12));

/// linear -> gelu -> linear
template <typename T>
struct Mlp {
  Mlp() = default;
  Mlp(ParamRegistry<T>& reg, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out);
  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }

  Linear<T> fc1, fc2;
};

/// Rows of the batch that carry each task; predictions are produced for these
/// rows only, in the listed order.
using TaskSelection = std::array<std::vector<std::size_t>, kNumTasks>;

TaskSelection select_all(std::size_t batch);

template <typename T>
struct TaskPredictions {
  std::optional<Tensor<T>> parsing;      // [n, C_seg, H, W]
  std::optional<Tensor<T>> landmarks;    // [n, 68, 2]
  std::optional<Tensor<T>> heatmaps;     // [n, 68, h*h] logits
  std::optional<Tensor<T>> headpose;     // [n, 3, 3] in SO(3)
  std::optional<Tensor<T>> attributes;   // [n, 40]
  std::optional<Tensor<T>> age;          // [n, A_bins]
  std::optional<Tensor<T>> age_expected; // [n] in years
  std::optional<Tensor<T>> gender;       // [n, 2]
  std::optional<Tensor<T>> race;         // [n, R]
  std::optional<Tensor<T>> expression;   // [n, E]
  std::optional<Tensor<T>> embedding;    // [n, D_emb], unit rows
  std::optional<Tensor<T>> visibility;   // [n, V]
};

/// Final task-to-face refinement followed by the ten task heads.
template <typename T>
struct UnifiedHead {
  UnifiedHead() = default;
  /// With refine = false the refinement block is omitted and heads read the
  /// decoder's task tokens directly.
  UnifiedHead(ParamRegistry<T>& reg, const std::string& prefix, const HeadConfig& cfg,
              const AttentionConfig& attention, bool refine = true);

  /// tasks [B, K, D], face [B, L, D] with L = (H/4)(W/4).
  TaskPredictions<T> operator()(const Tensor<T>& tasks, const Tensor<T>& face, std::size_t height,
                                std::size_t width, const TaskSelection& selection) const;

  /// Token rows of `task` for the selected batch rows, refined when enabled.
  Tensor<T> task_tokens(Task task, const Tensor<T>& tasks, const Tensor<T>& face,
                        const std::vector<std::size_t>& rows) const;

  HeadConfig cfg;
  TokenLayout layout{4};
  bool refine_enabled = true;
  AttentionBlock<T> refine;
  Mlp<T> landmarks, headpose, attributes, age, gender, race, expression, recognition, visibility;
  Tensor<T> age_centers;
  Tensor<T> heatmap_grid;
};

}  // namespace fxf
