#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fxf/nn.hpp"

namespace fxf {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;

  /// Throws ConfigError for betas outside [0, 1), eps <= 0 or negative decay.
  void validate() const;
};

/// What step() does with a parameter that received no gradient.
enum class MissingGrad { error, skip };

/// Adaptive-moment optimizer with decoupled weight decay. The decay
/// p ← p - lr·wd·p is applied before the moment update, and the update uses
/// bias-corrected moments.
template <typename T>
class AdamW {
 public:
  AdamW(const ParamRegistry<T>& registry, AdamWConfig cfg = {});

  /// Updates every registered parameter in place and clears its gradient.
  /// With MissingGrad::error a parameter without gradient throws DomainError
  /// naming it; with skip it is left untouched, moments and decay included.
  void step(ParamRegistry<T>& registry, double lr, MissingGrad policy = MissingGrad::error);

  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<double>& first_moment(std::size_t param) const { return m_.at(param); }
  const std::vector<double>& second_moment(std::size_t param) const { return v_.at(param); }
  /// Update count per parameter; skipped parameters lag behind steps().
  std::size_t param_steps(std::size_t param) const { return t_.at(param); }

 private:
  AdamWConfig cfg_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<std::size_t> t_;
  std::size_t steps_ = 0;
};

/// base_lr · 10^-(number of decay epochs <= epoch). Throws ConfigError if the
/// decay epochs are not sorted ascending.
double lr_schedule(std::size_t epoch, double base_lr, const std::vector<std::size_t>& decay_epochs);

}  // namespace fxf
