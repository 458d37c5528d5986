#pragma once

#include <functional>
#include <vector>

#include "cstyolo/gradcheck.hpp"

namespace cstyolo {

struct GradSuiteEntry {
  GradCheckResult result;
  double tolerance = 1e-4;
  bool passed() const { return result.max_rel_error < tolerance; }
};

/// Finite-difference checks in f64 of every differentiable op, every block,
/// the novel modules and the detection loss, on random inputs no larger than
/// 2x16x16x16. `progress` sees each entry as it finishes.
std::vector<GradSuiteEntry> run_gradient_suite(
    uint64_t seed = 0, const std::function<void(const GradSuiteEntry&)>& progress = {});

}  // namespace cstyolo
