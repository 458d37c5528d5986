#pragma once

#include "cstyolo/nn/module.hpp"
#include "cstyolo/ops.hpp"

namespace cstyolo::nn {

class Conv2d : public Module {
 public:
  Conv2d(int64_t in_channels, int64_t out_channels, int kernel, int stride, int padding, bool bias,
         Rng& rng);

  Tensor forward(const Tensor& x) const;

  Tensor& weight() { return *weight_; }
  const Tensor& weight() const { return *weight_; }
  /// Undefined when the layer has no bias.
  Tensor& bias() { return *bias_; }
  const Tensor& bias() const { return *bias_; }
  bool has_bias() const { return bias_ != &no_bias_; }

  int64_t in_channels() const { return in_; }
  int64_t out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int padding() const { return padding_; }

 private:
  int64_t in_;
  int64_t out_;
  int kernel_;
  int stride_;
  int padding_;
  Tensor no_bias_;
  Tensor* weight_;
  Tensor* bias_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int64_t channels, double eps = 1e-3, double momentum = 0.03);

  Tensor forward(const Tensor& x);

  Tensor& gamma() { return *gamma_; }
  Tensor& beta() { return *beta_; }
  Tensor& running_mean() { return *mean_; }
  Tensor& running_var() { return *var_; }
  double eps() const { return eps_; }

 private:
  double eps_;
  double momentum_;
  Tensor* gamma_;
  Tensor* beta_;
  Tensor* mean_;
  Tensor* var_;
};

/// Channel-wise layer normalization of (B, C, H, W) maps.
class LayerNorm : public Module {
 public:
  explicit LayerNorm(int64_t channels, double eps = 1e-5);
  Tensor forward(const Tensor& x) const;
  Tensor& gamma() { return *gamma_; }
  Tensor& beta() { return *beta_; }

 private:
  double eps_;
  Tensor* gamma_;
  Tensor* beta_;
};

/// Token projection: (N, 1, T, in) -> (N, 1, T, out).
class Linear : public Module {
 public:
  Linear(int64_t in_features, int64_t out_features, Rng& rng);
  Tensor forward(const Tensor& x) const;
  Tensor& weight() { return *weight_; }
  Tensor& bias() { return *bias_; }

 private:
  Tensor* weight_;
  Tensor* bias_;
};

}  // namespace cstyolo::nn
