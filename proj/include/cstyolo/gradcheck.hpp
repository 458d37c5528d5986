#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cstyolo/tensor.hpp"

namespace cstyolo {

struct GradCheckOptions {
  double step = 1e-4;
  /// Denominator floor: error_i = |a_i - n_i| / max(|a_i|, |n_i|, floor).
  double floor = 1e-3;
  /// Elements probed per tensor; 0 probes every element.
  int64_t max_probes_per_tensor = 0;
  uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int64_t probes = 0;
  /// Where the worst error occurred: input index and flat element.
  int worst_input = -1;
  int64_t worst_element = -1;
};

/// Compares reverse-mode gradients of the scalar `f()` against central finite
/// differences for every tensor in `inputs`. Inputs must be f64 leaves with
/// requires_grad set; their values are perturbed in place and restored.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& f,
                                std::vector<Tensor> inputs, const GradCheckOptions& options = {});

/// Sum of `y` weighted by fixed pseudo-random coefficients; a scalar probe that
/// avoids the cancellations `sum(y)` has under normalization layers.
Tensor random_projection(const Tensor& y, uint64_t seed);

}  // namespace cstyolo
