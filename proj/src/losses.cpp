#include "fxf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fxf/error.hpp"
#include "fxf/heads.hpp"
#include "fxf/ops.hpp"

namespace fxf {

template <typename T>
Tensor<T> safe_acos(const Tensor<T>& c, double eps) {
  std::vector<T> out(c.numel());
  auto cd = c.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(std::acos(std::clamp(static_cast<double>(cd[i]), -1.0, 1.0)));
  }
  auto cn = c.node();
  return detail::record_op<T>("safe_acos", {c}, Tensor<T>(c.shape(), std::move(out)),
                              [cn, eps](std::span<const T> g) {
    auto gc = detail::grad_buffer(*cn);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = std::clamp(static_cast<double>(cn->data[i]), -1.0 + eps, 1.0 - eps);
      gc[i] += static_cast<T>(-static_cast<double>(g[i]) / std::sqrt(1.0 - x * x));
    }
  });
}

template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& d, double beta) {
  std::vector<T> out(d.numel());
  auto dd = d.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double a = std::abs(static_cast<double>(dd[i]));
    out[i] = static_cast<T>(a < beta ? 0.5 * a * a / beta : a - 0.5 * beta);
  }
  auto dn = d.node();
  return detail::record_op<T>("smooth_l1", {d}, Tensor<T>(d.shape(), std::move(out)),
                              [dn, beta](std::span<const T> g) {
    auto gd = detail::grad_buffer(*dn);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = static_cast<double>(dn->data[i]);
      double slope = std::abs(x) < beta ? x / beta : (x > 0 ? 1.0 : -1.0);
      gd[i] += static_cast<T>(static_cast<double>(g[i]) * slope);
    }
  });
}

double dice_coefficient(const std::vector<int>& pred, const std::vector<int>& target) {
  if (pred.size() != target.size()) throw ShapeError("dice masks differ in size");
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += (pred[i] != 0 && target[i] != 0) ? 1.0 : 0.0;
    total += (pred[i] != 0) + (target[i] != 0);
  }
  return total == 0.0 ? 1.0 : 2.0 * inter / total;
}

namespace {

template <typename T>
Tensor<T> one_hot(const std::vector<std::size_t>& labels, std::size_t classes, const char* what) {
  std::vector<T> v(labels.size() * classes, T(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw DomainError(std::string(what) + " label " + std::to_string(labels[i]) + " out of range for " +
                        std::to_string(classes) + " classes");
    }
    v[i * classes + labels[i]] = T(1);
  }
  return Tensor<T>({labels.size(), classes}, std::move(v));
}

}  // namespace

template <typename T>
Tensor<T> seg_loss(const Tensor<T>& logits, const std::vector<std::size_t>& target) {
  if (logits.dim() != 4) throw ShapeError("seg_loss expects logits [B, C, H, W], got " + to_string(logits.shape()));
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  const std::size_t hw = logits.shape()[2] * logits.shape()[3];
  if (target.size() != b * hw) throw ShapeError("seg_loss target size does not match logits");
  // class-major views [C, B·H·W]
  std::vector<T> onehot(c * b * hw, T(0));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      std::size_t cls = target[i * hw + p];
      if (cls >= c) throw DomainError("segmentation class " + std::to_string(cls) + " out of range");
      onehot[cls * b * hw + i * hw + p] = T(1);
    }
  Tensor<T> t({c, b * hw}, std::move(onehot));
  Tensor<T> cm = reshape(permute(logits, {1, 0, 2, 3}), {c, b * hw});
  Tensor<T> logp = log_softmax(cm, 0);
  Tensor<T> prob = exp(logp);

  const T smooth = T(1);
  Tensor<T> inter = sum(mul(prob, t), 1);
  Tensor<T> denom = add(sum(prob, 1), sum(t, 1));
  Tensor<T> dice = div(add_scalar(scale(inter, T(2)), smooth), add_scalar(denom, smooth));
  Tensor<T> dice_loss = add_scalar(neg(mean(dice)), T(1));
  Tensor<T> ce = scale(sum(mul(logp, t)), T(-1) / static_cast<T>(b * hw));
  return scale(add(dice_loss, ce), T(0.5));
}

template <typename T>
Tensor<T> landmark_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape() || pred.dim() != 3 || pred.shape()[2] != 2) {
    throw ShapeError("landmark_loss expects matching [B, N, 2] tensors, got " + to_string(pred.shape()) + " and " +
                     to_string(target.shape()));
  }
  const std::size_t points = pred.shape()[0] * pred.shape()[1];
  return scale(sum(smooth_l1(sub(pred, target))), T(1) / static_cast<T>(points));
}

template <typename T>
void require_rotations(const Tensor<T>& r, double tol) {
  if (r.dim() != 3 || r.shape()[1] != 3 || r.shape()[2] != 3) {
    throw ShapeError("expected rotations [B, 3, 3], got " + to_string(r.shape()));
  }
  auto d = r.data();
  for (std::size_t b = 0; b < r.shape()[0]; ++b) {
    const T* m = d.data() + b * 9;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += static_cast<double>(m[k * 3 + i]) * static_cast<double>(m[k * 3 + j]);
        if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) {
          throw DomainError("matrix " + std::to_string(b) + " is not orthonormal");
        }
      }
    double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                 m[2] * (m[3] * m[7] - m[4] * m[6]);
    if (std::abs(det - 1.0) > tol) throw DomainError("matrix " + std::to_string(b) + " has det != 1");
  }
}

template <typename T>
Tensor<T> geodesic_loss(const Tensor<T>& r_pred, const Tensor<T>& r_true) {
  if (r_pred.shape() != r_true.shape()) {
    throw ShapeError("geodesic_loss shape mismatch: " + to_string(r_pred.shape()) + " vs " +
                     to_string(r_true.shape()));
  }
  require_rotations(r_pred, 1e-3);
  require_rotations(r_true, 1e-3);
  const std::size_t b = r_pred.shape()[0];
  // trace(Aᵀ B) = Σ_ij A_ij B_ij
  Tensor<T> tr = sum(reshape(mul(r_pred, r_true), {b, 9}), 1);
  Tensor<T> c = scale(add_scalar(tr, T(-1)), T(0.5));
  return mean(safe_acos(c));
}

template <typename T>
Tensor<T> margin_softmax_loss(const Tensor<T>& embeddings, const std::vector<std::size_t>& labels,
                              const Tensor<T>& class_weights, const MarginConfig& cfg) {
  if (embeddings.dim() != 2 || class_weights.dim() != 2 || embeddings.shape()[1] != class_weights.shape()[1] ||
      labels.size() != embeddings.shape()[0]) {
    throw ShapeError("margin_softmax_loss shape mismatch: embeddings " + to_string(embeddings.shape()) +
                     ", weights " + to_string(class_weights.shape()));
  }
  const std::size_t b = embeddings.shape()[0], d = embeddings.shape()[1], n = class_weights.shape()[0];
  auto ed = embeddings.data();
  for (std::size_t i = 0; i < b; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += static_cast<double>(ed[i * d + k]) * ed[i * d + k];
    if (std::abs(std::sqrt(norm) - 1.0) > 1e-4) throw DomainError("margin softmax needs unit-norm embeddings");
  }
  Tensor<T> mask = one_hot<T>(labels, n, "identity");
  Tensor<T> cosine = matmul(embeddings, transpose(l2_normalize(class_weights), 0, 1));
  Tensor<T> shifted = safe_acos(cosine);
  // cos(θ + m) on the true class only
  std::vector<T> cos_of(shifted.numel());
  auto sd = shifted.data();
  for (std::size_t i = 0; i < cos_of.size(); ++i) cos_of[i] = static_cast<T>(std::cos(sd[i] + cfg.margin));
  auto sn = shifted.node();
  const double m = cfg.margin;
  Tensor<T> target = detail::record_op<T>("cos_shift", {shifted}, Tensor<T>(shifted.shape(), std::move(cos_of)),
                                          [sn, m](std::span<const T> g) {
    auto gs = detail::grad_buffer(*sn);
    for (std::size_t i = 0; i < g.size(); ++i) gs[i] += static_cast<T>(-static_cast<double>(g[i]) * std::sin(sn->data[i] + m));
  });
  Tensor<T> logits = scale(add(cosine, mul(mask, sub(target, cosine))), static_cast<T>(cfg.scale));
  Tensor<T> logp = log_softmax(logits, 1);
  return scale(sum(mul(logp, mask)), T(-1) / static_cast<T>(b));
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce shape mismatch: " + to_string(logits.shape()) + " vs " + to_string(targets.shape()));
  }
  for (T t : targets.data())
    if (t != T(0) && t != T(1)) throw DomainError("bce targets must be 0 or 1");
  const std::size_t n = logits.numel();
  std::vector<T> out(n);
  auto x = logits.data();
  auto y = targets.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double xi = x[i];
    total += std::max(xi, 0.0) - xi * static_cast<double>(y[i]) + std::log1p(std::exp(-std::abs(xi)));
  }
  auto ln = logits.node();
  auto tn = targets.node();
  return detail::record_op<T>("bce_with_logits", {logits}, Tensor<T>::scalar(static_cast<T>(total / n)),
                              [ln, tn, n](std::span<const T> g) {
    auto gl = detail::grad_buffer(*ln);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 1.0 / (1.0 + std::exp(-static_cast<double>(ln->data[i])));
      gl[i] += static_cast<T>(static_cast<double>(g[0]) * (s - static_cast<double>(tn->data[i])) / n);
    }
  });
}

template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  if (logits.dim() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("ce_loss expects logits [B, K] with B labels, got " + to_string(logits.shape()));
  }
  Tensor<T> mask = one_hot<T>(labels, logits.shape()[1], "class");
  return scale(sum(mul(log_softmax(logits, 1), mask)), T(-1) / static_cast<T>(labels.size()));
}

std::size_t age_bin(double age, std::size_t bins, double max_age) {
  if (!(age >= 0.0 && age <= max_age)) {
    throw DomainError("age " + std::to_string(age) + " outside [0, " + std::to_string(max_age) + "]");
  }
  auto b = static_cast<std::size_t>(age / (max_age / static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

template <typename T>
Tensor<T> age_loss(const Tensor<T>& bin_logits, const Tensor<T>& expected_age, const std::vector<double>& ages,
                   double max_age) {
  if (bin_logits.dim() != 2 || expected_age.numel() != ages.size() || bin_logits.shape()[0] != ages.size()) {
    throw ShapeError("age_loss shape mismatch: logits " + to_string(bin_logits.shape()) + ", expected " +
                     to_string(expected_age.shape()));
  }
  const std::size_t bins = bin_logits.shape()[1];
  std::vector<std::size_t> labels;
  for (double a : ages) labels.push_back(age_bin(a, bins, max_age));
  Tensor<T> ce = ce_loss(bin_logits, labels);
  Tensor<T> gt({ages.size()}, std::vector<T>(ages.begin(), ages.end()));
  Tensor<T> l1 = scale(mean(abs(sub(reshape(expected_age, {ages.size()}), gt))), static_cast<T>(1.0 / max_age));
  return scale(add(ce, l1), T(0.5));
}

void LossWeights::validate() const {
  const std::array<double, 9> all = {seg, lnd, hpe, attr, age, gender_race, exp, fr, vis};
  bool any = false;
  for (double v : all) {
    if (!(v >= 0.0)) throw ConfigError("loss weights must be non-negative");
    any = any || v > 0.0;
  }
  if (!any) throw ConfigError("at least one loss weight must be positive");
}

double LossWeights::weight(Task t) const {
  switch (t) {
    case Task::parsing: return seg;
    case Task::landmarks: return lnd;
    case Task::headpose: return hpe;
    case Task::attributes: return attr;
    case Task::age: return age;
    case Task::gender:
    case Task::race: return gender_race;
    case Task::expression: return exp;
    case Task::recognition: return fr;
    case Task::visibility: return vis;
  }
  return 0.0;
}

template <typename T>
LossReport<T> joint_loss(const std::array<std::optional<Tensor<T>>, kNumTasks>& losses, const LossWeights& w) {
  LossReport<T> report;
  std::optional<Tensor<T>> total;
  for (Task t : kAllTasks) {
    const auto& l = losses[task_index(t)];
    if (!l) continue;
    report.task[task_index(t)] = static_cast<double>(l->item());
    Tensor<T> term = scale(*l, static_cast<T>(w.weight(t)));
    total = total ? add(*total, term) : term;
  }
  if (!total) throw DomainError("joint loss needs at least one task loss");
  report.total = *total;
  return report;
}

#define FXF_INSTANTIATE_LOSSES(T)                                                                                \
  template Tensor<T> safe_acos<T>(const Tensor<T>&, double);                                                     \
  template Tensor<T> smooth_l1<T>(const Tensor<T>&, double);                                                     \
  template Tensor<T> seg_loss<T>(const Tensor<T>&, const std::vector<std::size_t>&);                             \
  template Tensor<T> landmark_loss<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template void require_rotations<T>(const Tensor<T>&, double);                                                  \
  template Tensor<T> geodesic_loss<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> margin_softmax_loss<T>(const Tensor<T>&, const std::vector<std::size_t>&, const Tensor<T>&, \
                                            const MarginConfig&);                                                \
  template Tensor<T> bce_with_logits<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> ce_loss<T>(const Tensor<T>&, const std::vector<std::size_t>&);                              \
  template Tensor<T> age_loss<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<double>&, double);        \
  template LossReport<T> joint_loss<T>(const std::array<std::optional<Tensor<T>>, kNumTasks>&, const LossWeights&);

FXF_INSTANTIATE_LOSSES(float)
FXF_INSTANTIATE_LOSSES(double)

}  // namespace fxf
