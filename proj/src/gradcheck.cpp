#include "fxf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fxf/error.hpp"

namespace fxf {

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h) {
  if (!(h > T(0))) throw DomainError("finite_diff_grad: step must be positive");
  NoGradGuard no_grad;
  Tensor<T> probe = x.clone();
  auto data = probe.mutable_data();
  std::vector<T> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    T saved = data[i];
    data[i] = saved + h;
    T plus = f(probe);
    data[i] = saved - h;
    T minus = f(probe);
    data[i] = saved;
    out[i] = (plus - minus) / (T(2) * h);
  }
  return Tensor<T>(x.shape(), std::move(out));
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    double err = std::abs(a[i] - b[i]) / denom;
    if (std::isnan(err)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, err);
  }
  return worst;
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.worst_rel_error);
  return w;
}

template <typename T>
GradCheckReport check_gradients(const std::function<Tensor<T>()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor<T>>>& params,
                                const GradCheckOptions& options) {
  std::vector<Tensor<T>> leaves;
  for (const auto& [name, t] : params) {
    Tensor<T> leaf = t;
    leaf.set_requires_grad(true);
    leaf.zero_grad();
    leaves.push_back(leaf);
  }
  Tensor<T> loss = loss_fn();
  backward(loss);

  auto eval = [&]() {
    NoGradGuard no_grad;
    return static_cast<double>(loss_fn().item());
  };

  Rng rng(options.seed);
  GradCheckReport report;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    Tensor<T>& leaf = leaves[p];
    std::vector<T> analytic = leaf.grad();
    std::size_t n = analytic.size();

    std::vector<std::size_t> picks;
    if (options.max_elements_per_tensor == 0 || options.max_elements_per_tensor >= n) {
      picks.resize(n);
      std::iota(picks.begin(), picks.end(), std::size_t{0});
    } else {
      std::size_t top = 0;
      for (std::size_t i = 1; i < n; ++i) {
        if (std::abs(analytic[i]) > std::abs(analytic[top])) top = i;
      }
      picks.push_back(top);
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i) {
        if (i != top) rest.push_back(i);
      }
      rng.shuffle(rest);
      for (std::size_t i = 0; picks.size() < options.max_elements_per_tensor; ++i) {
        picks.push_back(rest[i]);
      }
    }

    std::vector<double> a, b;
    auto data = leaf.mutable_data();
    for (std::size_t i : picks) {
      T saved = data[i];
      data[i] = saved + static_cast<T>(options.h);
      double plus = eval();
      data[i] = saved - static_cast<T>(options.h);
      double minus = eval();
      data[i] = saved;
      a.push_back(static_cast<double>(analytic[i]));
      b.push_back((plus - minus) / (2.0 * options.h));
    }
    report.entries.push_back(
        GradCheckEntry{params[p].first, max_relative_error(a, b, options.magnitude_floor), picks.size()});
  }
  return report;
}

template Tensor<float> finite_diff_grad<float>(const std::function<float(const Tensor<float>&)>&,
                                               const Tensor<float>&, float);
template Tensor<double> finite_diff_grad<double>(const std::function<double(const Tensor<double>&)>&,
                                                 const Tensor<double>&, double);
template GradCheckReport check_gradients<float>(
    const std::function<Tensor<float>()>&, const std::vector<std::pair<std::string, Tensor<float>>>&,
    const GradCheckOptions&);
template GradCheckReport check_gradients<double>(
    const std::function<Tensor<double>()>&,
    const std::vector<std::pair<std::string, Tensor<double>>>&, const GradCheckOptions&);

}  // namespace fxf
