#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fxf/tensor.hpp"

namespace fxf {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h);

/// Largest |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor turns the
/// comparison absolute for entries whose true magnitude is below it.
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor);

struct GradCheckOptions {
  double h = 1e-5;
  /// 0 checks every element; otherwise the largest-gradient element plus
  /// random others, up to this many per tensor.
  std::size_t max_elements_per_tensor = 0;
  double magnitude_floor = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  double worst_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst() const;
  bool passed(double rtol) const { return worst() < rtol; }
};

/// Compares backward() gradients of the scalar produced by `loss_fn` against
/// central finite differences, perturbing the given tensors in place.
template <typename T>
GradCheckReport check_gradients(const std::function<Tensor<T>()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor<T>>>& params,
                                const GradCheckOptions& options = {});

}  // namespace fxf
