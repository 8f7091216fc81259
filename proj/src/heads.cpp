#include "fxf/heads.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>

#include "fxf/error.hpp"
#include "fxf/ops.hpp"

namespace fxf {

void HeadConfig::validate() const {
  if (seg_classes == 0 || age_bins == 0 || races == 0 || expressions == 0 || visibility == 0 ||
      attributes == 0 || embed_dim == 0 || num_identities == 0 || hidden == 0) {
    throw ConfigError("head cardinalities must be positive");
  }
  if (heatmap_side < 4) throw ConfigError("heatmap_side must be at least 4");
  if (!(max_age > 0.0)) throw ConfigError("max_age must be positive");
}

std::vector<double> HeadConfig::age_bin_centers() const {
  std::vector<double> c(age_bins);
  const double width = max_age / static_cast<double>(age_bins);
  for (std::size_t i = 0; i < age_bins; ++i) c[i] = (static_cast<double>(i) + 0.5) * width;
  return c;
}

std::size_t HeadConfig::classes(Task t) const {
  switch (t) {
    case Task::parsing: return seg_classes;
    case Task::landmarks: return 2 * kNumLandmarks;
    case Task::headpose: return 9;
    case Task::attributes: return attributes;
    case Task::age: return age_bins;
    case Task::gender: return 2;
    case Task::race: return races;
    case Task::expression: return expressions;
    case Task::recognition: return embed_dim;
    case Task::visibility: return visibility;
  }
  return 0;
}

template <typename T>
Tensor<T> project_to_so3(const Tensor<T>& m) {
  if (m.dim() != 3 || m.shape()[1] != 3 || m.shape()[2] != 3) {
    throw ShapeError("rotation projection expects [B, 3, 3], got " + to_string(m.shape()));
  }
  using Mat = Eigen::Matrix3d;
  using RowMat = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
  const std::size_t b = m.shape()[0];
  struct Factors {
    Mat r, v;
    Eigen::Vector3d s;
  };
  auto factors = std::make_shared<std::vector<Factors>>(b);
  std::vector<T> out(b * 9);
  auto md = m.data();
  for (std::size_t i = 0; i < b; ++i) {
    RowMat mi;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) mi(r, c) = static_cast<double>(md[i * 9 + r * 3 + c]);
    Eigen::JacobiSVD<Mat> svd(Mat(mi), Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = svd.singularValues();
    if (!(s(2) > 1e-10 * std::max(s(0), 1e-300))) {
      throw DomainError("rotation projection is degenerate: input matrix has rank < 3");
    }
    const Mat& u = svd.matrixU();
    const Mat& v = svd.matrixV();
    double d = (u * v.transpose()).determinant() < 0 ? -1.0 : 1.0;
    Mat r = u * Eigen::Vector3d(1, 1, d).asDiagonal() * v.transpose();
    (*factors)[i] = {r, v, Eigen::Vector3d(s(0), s(1), d * s(2))};
    for (int rr = 0; rr < 3; ++rr)
      for (int c = 0; c < 3; ++c) out[i * 9 + rr * 3 + c] = static_cast<T>(r(rr, c));
  }
  auto mn = m.node();
  return detail::record_op<T>("project_to_so3", {m}, Tensor<T>(m.shape(), std::move(out)),
                              [mn, factors](std::span<const T> g) {
    auto gm = detail::grad_buffer(*mn);
    for (std::size_t i = 0; i < factors->size(); ++i) {
      const auto& f = (*factors)[i];
      RowMat gi;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) gi(r, c) = static_cast<double>(g[i * 9 + r * 3 + c]);
      // dR = R Ω with Ω = V (C ∘ Vᵀ(RᵀdM - dMᵀR)V) Vᵀ, C_ij = 1 / (s_i + s_j)
      Mat bm = f.v.transpose() * (f.r.transpose() * Mat(gi)) * f.v;
      Mat z;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) z(r, c) = bm(r, c) / (f.s(r) + f.s(c));
      z = f.v * z * f.v.transpose();
      Mat grad = f.r * (z - z.transpose());
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) gm[i * 9 + r * 3 + c] += static_cast<T>(grad(r, c));
    }
  });
}

template <typename T>
Tensor<T> soft_argmax(const Tensor<T>& heatmap_logits, std::size_t side) {
  const std::size_t cells = side * side;
  if (side < 2 || heatmap_logits.dim() < 1 || heatmap_logits.shape().back() != cells) {
    throw ShapeError("soft_argmax expects a trailing axis of " + std::to_string(cells) + ", got " +
                     to_string(heatmap_logits.shape()));
  }
  std::vector<T> grid(cells * 2);
  const T denom = static_cast<T>(side - 1);
  for (std::size_t j = 0; j < cells; ++j) {
    grid[j * 2] = static_cast<T>(j % side) / denom;
    grid[j * 2 + 1] = static_cast<T>(j / side) / denom;
  }
  Tensor<T> p = softmax(heatmap_logits, -1);
  Shape out_shape = heatmap_logits.shape();
  out_shape.back() = 2;
  Tensor<T> flat = reshape(p, {p.numel() / cells, cells});
  return reshape(matmul(flat, Tensor<T>({cells, 2}, std::move(grid))), out_shape);
}

template <typename T>
Tensor<T> parsing_logits(const Tensor<T>& seg_tokens, const Tensor<T>& face, std::size_t height, std::size_t width) {
  if (height % 4 != 0 || width % 4 != 0 || seg_tokens.dim() != 3 || face.dim() != 3 ||
      seg_tokens.shape()[0] != face.shape()[0] || seg_tokens.shape()[2] != face.shape()[2] ||
      face.shape()[1] != (height / 4) * (width / 4)) {
    throw ShapeError("parsing head needs tokens [B, C, D] and face [B, (H/4)(W/4), D] for H=" +
                     std::to_string(height) + ", W=" + std::to_string(width) + ", got " +
                     to_string(seg_tokens.shape()) + " and " + to_string(face.shape()));
  }
  const std::size_t b = face.shape()[0];
  const std::size_t c = seg_tokens.shape()[1];
  Tensor<T> low = matmul(seg_tokens, transpose(face, 1, 2));  // [B, C, L]
  Tensor<T> grid = reshape(low, {b, c, height / 4, width / 4});
  return bilinear_resize(grid, height, width);
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
  Tensor<T> sq = sum(square(x), -1);
  Shape keep = x.shape();
  keep.back() = 1;
  return div(x, reshape(sqrt(add_scalar(sq, eps)), keep));
}

template <typename T>
Mlp<T>::Mlp(ParamRegistry<T>& reg, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out)
    : fc1(reg, prefix + ".fc1", in, hidden), fc2(reg, prefix + ".fc2", hidden, out) {}

TaskSelection select_all(std::size_t batch) {
  TaskSelection sel;
  for (auto& rows : sel) {
    rows.resize(batch);
    std::iota(rows.begin(), rows.end(), 0);
  }
  return sel;
}

template <typename T>
UnifiedHead<T>::UnifiedHead(ParamRegistry<T>& reg, const std::string& prefix, const HeadConfig& config,
                            const AttentionConfig& attention, bool with_refine)
    : cfg(config), layout(config.seg_classes), refine_enabled(with_refine) {
  cfg.validate();
  const std::size_t d = attention.model_dim;
  const std::size_t h = cfg.hidden;
  if (refine_enabled) refine = AttentionBlock<T>(reg, prefix + ".refine", attention, false);
  landmarks = Mlp<T>(reg, prefix + ".landmarks", d, h, cfg.heatmap_side * cfg.heatmap_side);
  headpose = Mlp<T>(reg, prefix + ".headpose", d, h, 1);
  attributes = Mlp<T>(reg, prefix + ".attributes", d, h, cfg.attributes);
  age = Mlp<T>(reg, prefix + ".age", d, h, cfg.age_bins);
  gender = Mlp<T>(reg, prefix + ".gender", d, h, 2);
  race = Mlp<T>(reg, prefix + ".race", d, h, cfg.races);
  expression = Mlp<T>(reg, prefix + ".expression", d, h, cfg.expressions);
  recognition = Mlp<T>(reg, prefix + ".recognition", d, h, cfg.embed_dim);
  visibility = Mlp<T>(reg, prefix + ".visibility", d, h, cfg.visibility);
  auto centers = cfg.age_bin_centers();
  age_centers = Tensor<T>({cfg.age_bins, 1}, std::vector<T>(centers.begin(), centers.end()));
}

namespace {

bool is_identity(const std::vector<std::size_t>& rows, std::size_t batch) {
  if (rows.size() != batch) return false;
  for (std::size_t i = 0; i < batch; ++i)
    if (rows[i] != i) return false;
  return true;
}

template <typename T>
Tensor<T> take_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  return is_identity(rows, x.shape()[0]) ? x : index_select(x, rows);
}

}  // namespace

template <typename T>
Tensor<T> UnifiedHead<T>::task_tokens(Task task, const Tensor<T>& tasks, const Tensor<T>& face,
                                      const std::vector<std::size_t>& rows) const {
  Tensor<T> tok = slice(take_rows(tasks, rows), 1, layout.offset(task), layout.count(task));
  if (!refine_enabled) return tok;
  return refine(tok, take_rows(face, rows));
}

template <typename T>
TaskPredictions<T> UnifiedHead<T>::operator()(const Tensor<T>& tasks, const Tensor<T>& face, std::size_t height,
                                              std::size_t width, const TaskSelection& selection) const {
  if (tasks.dim() != 3 || tasks.shape()[1] != layout.total()) {
    throw ShapeError("unified head expects " + std::to_string(layout.total()) + " task tokens, got " +
                     to_string(tasks.shape()));
  }
  TaskPredictions<T> p;
  auto rows_of = [&](Task t) -> const std::vector<std::size_t>& { return selection[task_index(t)]; };
  auto single = [&](Task t, const Mlp<T>& mlp) {
    Tensor<T> tok = task_tokens(t, tasks, face, rows_of(t));
    return reshape(mlp(tok), {tok.shape()[0], mlp.fc2.weight.shape()[0]});
  };

  if (!rows_of(Task::parsing).empty()) {
    const auto& rows = rows_of(Task::parsing);
    p.parsing = parsing_logits(task_tokens(Task::parsing, tasks, face, rows), take_rows(face, rows), height, width);
  }
  if (!rows_of(Task::landmarks).empty()) {
    Tensor<T> heat = landmarks(task_tokens(Task::landmarks, tasks, face, rows_of(Task::landmarks)));
    p.heatmaps = heat;
    p.landmarks = soft_argmax(heat, cfg.heatmap_side);
  }
  if (!rows_of(Task::headpose).empty()) {
    Tensor<T> tok = task_tokens(Task::headpose, tasks, face, rows_of(Task::headpose));
    p.headpose = project_to_so3(reshape(headpose(tok), {tok.shape()[0], 3, 3}));
  }
  if (!rows_of(Task::attributes).empty()) p.attributes = single(Task::attributes, attributes);
  if (!rows_of(Task::age).empty()) {
    Tensor<T> logits = single(Task::age, age);
    p.age = logits;
    p.age_expected = reshape(matmul(softmax(logits, -1), age_centers), {logits.shape()[0]});
  }
  if (!rows_of(Task::gender).empty()) p.gender = single(Task::gender, gender);
  if (!rows_of(Task::race).empty()) p.race = single(Task::race, race);
  if (!rows_of(Task::expression).empty()) p.expression = single(Task::expression, expression);
  if (!rows_of(Task::recognition).empty()) p.embedding = l2_normalize(single(Task::recognition, recognition));
  if (!rows_of(Task::visibility).empty()) p.visibility = single(Task::visibility, visibility);
  return p;
}

#define FXF_INSTANTIATE_HEADS(T)                                                                         \
  template Tensor<T> project_to_so3<T>(const Tensor<T>&);                                                \
  template Tensor<T> soft_argmax<T>(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> parsing_logits<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);    \
  template Tensor<T> l2_normalize<T>(const Tensor<T>&, T);                                               \
  template struct Mlp<T>;                                                                                \
  template struct UnifiedHead<T>;

FXF_INSTANTIATE_HEADS(float)
FXF_INSTANTIATE_HEADS(double)

}  // namespace fxf
