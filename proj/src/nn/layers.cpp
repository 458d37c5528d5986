#include "cstyolo/nn/layers.hpp"

namespace cstyolo::nn {

Conv2d::Conv2d(int64_t in_channels, int64_t out_channels, int kernel, int stride, int padding,
               bool bias, Rng& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  const int64_t fan_in = in_channels * kernel * kernel;
  weight_ = &add_parameter("weight",
                           init_uniform(Shape{out_channels, in_channels, kernel, kernel}, fan_in, rng),
                           ParamKind::conv_weight);
  bias_ = bias ? &add_parameter("bias", init_uniform(Shape{1, out_channels, 1, 1}, fan_in, rng),
                                ParamKind::bias)
               : &no_bias_;
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, *weight_, *bias_, stride_, padding_);
}

BatchNorm2d::BatchNorm2d(int64_t channels, double eps, double momentum)
    : eps_(eps), momentum_(momentum) {
  const Shape s{1, channels, 1, 1};
  gamma_ = &add_parameter("weight", Tensor::full(s, 1.0), ParamKind::norm_weight);
  beta_ = &add_parameter("bias", Tensor::zeros(s), ParamKind::bias);
  mean_ = &add_buffer("running_mean", Tensor::zeros(s));
  var_ = &add_buffer("running_var", Tensor::full(s, 1.0));
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  return batchnorm2d(x, *gamma_, *beta_, *mean_, *var_, {training(), momentum_, eps_});
}

LayerNorm::LayerNorm(int64_t channels, double eps) : eps_(eps) {
  const Shape s{1, channels, 1, 1};
  gamma_ = &add_parameter("weight", Tensor::full(s, 1.0), ParamKind::norm_weight);
  beta_ = &add_parameter("bias", Tensor::zeros(s), ParamKind::bias);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, *gamma_, *beta_, eps_); }

Linear::Linear(int64_t in_features, int64_t out_features, Rng& rng) {
  weight_ = &add_parameter("weight", init_uniform(Shape{1, 1, in_features, out_features}, in_features, rng),
                           ParamKind::linear_weight);
  bias_ = &add_parameter("bias", init_uniform(Shape{1, 1, 1, out_features}, in_features, rng),
                         ParamKind::bias);
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, *weight_), *bias_); }

}  // namespace cstyolo::nn
