#include "cstyolo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cstyolo/ops.hpp"

namespace cstyolo {

GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& f,
                                std::vector<Tensor> inputs, const GradCheckOptions& options) {
  for (const auto& t : inputs) {
    if (t.dtype() != DType::f64 || !t.is_leaf() || !t.requires_grad()) {
      throw ContractError("check_gradients(" + name + "): inputs must be f64 leaves requiring grad");
    }
  }
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = f();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) analytic.push_back(t.grad().to_vector());

  GradCheckResult result;
  result.name = name;
  Rng rng(options.seed);
  NoGradGuard no_grad;
  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    std::vector<int64_t> probe(t.numel());
    std::iota(probe.begin(), probe.end(), 0);
    if (options.max_probes_per_tensor > 0 &&
        static_cast<int64_t>(probe.size()) > options.max_probes_per_tensor) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(options.max_probes_per_tensor);
      std::sort(probe.begin(), probe.end());
    }
    auto values = t.mutable_data<double>();
    for (int64_t i : probe) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = f().item();
      values[i] = saved - options.step;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.probes;
      if (err > result.max_rel_error || result.worst_input < 0) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_input = static_cast<int>(k);
          result.worst_element = i;
        }
      }
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return result;
}

Tensor random_projection(const Tensor& y, uint64_t seed) {
  Rng rng(seed);
  Tensor r = Tensor::uniform(y.shape(), -1.0, 1.0, rng, y.dtype());
  return sum(mul(y, r));
}

}  // namespace cstyolo
