#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fxf/gradcheck.hpp"

namespace fxf {

struct GradCheckSuiteOptions {
  double rtol = 1e-4;
  std::uint64_t seed = 0;
  /// Elements checked per tensor in the module checks; the op checks always
  /// cover every element.
  std::size_t elements_per_tensor = 4;
  /// Elements per tensor in the full-model check: the largest-gradient entry
  /// plus random others.
  std::size_t model_elements_per_tensor = 2;
  /// Finite-difference step of the full-model check; the others use 1e-5.
  double model_step = 1e-4;
};

struct GradCheckModuleResult {
  std::string module;  // ops, nn, encoder, decoder, heads, losses, model
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  std::size_t checked = 0;
  bool passed = false;
  double seconds = 0.0;
};

/// Finite-difference checks in 64-bit of every differentiable op, the
/// building blocks, the losses and the full model at toy dims (32x32 input,
/// D = 16, two decoder layers, one sample per task so all ten heads run).
std::vector<GradCheckModuleResult> run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

}  // namespace fxf
