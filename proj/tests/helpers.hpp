#pragma once

#include "cstyolo/gradcheck.hpp"
#include "cstyolo/nn/module.hpp"
#include "cstyolo/ops.hpp"

namespace testutil {

using namespace cstyolo;

inline Tensor randn(const Shape& s, uint64_t seed, DType dt = DType::f64) {
  Rng rng(seed);
  return Tensor::normal(s, 0.0, 1.0, rng, dt);
}

inline Tensor leaf(Tensor t) { return t.set_requires_grad(true); }

inline std::vector<Tensor> params(nn::Module& m) {
  std::vector<Tensor> out;
  for (auto& p : m.parameters()) out.push_back(*p.tensor);
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto x = a.to_vector();
  const auto y = b.to_vector();
  if (x.size() != y.size()) return 1e300;
  double m = 0;
  for (size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

/// Gradient check of a module's forward w.r.t. its input and all parameters.
template <class F>
GradCheckResult check_module(const std::string& name, nn::Module& m, Tensor& x, F forward,
                             int64_t probes = 6, uint64_t seed = 1) {
  std::vector<Tensor> in{x};
  for (auto& p : params(m)) in.push_back(p);
  GradCheckOptions opt;
  opt.max_probes_per_tensor = probes;
  opt.seed = seed;
  return check_gradients(
      name, [&] { return random_projection(forward(x), seed + 7); }, in, opt);
}

}  // namespace testutil
