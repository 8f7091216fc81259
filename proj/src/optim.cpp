#include "fxf/optim.hpp"

#include <algorithm>
#include <cmath>

#include "fxf/error.hpp"

namespace fxf {

void AdamWConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("AdamW eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("AdamW weight decay must be non-negative");
}

template <typename T>
AdamW<T>::AdamW(const ParamRegistry<T>& registry, AdamWConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  for (const auto& e : registry.entries()) {
    names_.push_back(e.name);
    m_.emplace_back(e.tensor.numel(), 0.0);
    v_.emplace_back(e.tensor.numel(), 0.0);
    t_.push_back(0);
  }
}

template <typename T>
void AdamW<T>::step(ParamRegistry<T>& registry, double lr, MissingGrad policy) {
  const auto& entries = registry.entries();
  if (entries.size() != names_.size()) throw ConfigError("optimizer state does not match the registry");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != names_[i] || entries[i].tensor.numel() != m_[i].size()) {
      throw ConfigError("optimizer state does not match parameter " + entries[i].name);
    }
    if (!entries[i].tensor.has_grad() && policy == MissingGrad::error) {
      throw DomainError("parameter " + entries[i].name + " has no gradient");
    }
  }
  ++steps_;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<T> p = entries[i].tensor;
    if (!p.has_grad()) continue;
    const std::vector<T> g = p.grad();
    const std::size_t t = ++t_[i];
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      double x = static_cast<double>(w[k]);
      x -= lr * cfg_.weight_decay * x;
      const double gk = static_cast<double>(g[k]);
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      x -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
      w[k] = static_cast<T>(x);
    }
    p.zero_grad();
  }
}

double lr_schedule(std::size_t epoch, double base_lr, const std::vector<std::size_t>& decay_epochs) {
  if (!std::is_sorted(decay_epochs.begin(), decay_epochs.end())) {
    throw ConfigError("decay epochs must be sorted ascending");
  }
  const auto passed = std::upper_bound(decay_epochs.begin(), decay_epochs.end(), epoch) - decay_epochs.begin();
  return base_lr * std::pow(10.0, -static_cast<double>(passed));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace fxf
