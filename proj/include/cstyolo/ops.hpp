#pragma once

#include <array>
#include <memory>
#include <vector>

#include "cstyolo/tensor.hpp"

// Differentiable operations over (B, C, H, W) tensors. Every function records
// its backward rule on the tape when an input requires a gradient.
namespace cstyolo {

// ---- elementwise, with broadcasting of size-1 dimensions ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// Ties route the gradient to `a`.
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor atan(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);

enum class Activation { silu, sigmoid, leaky_relu, relu, identity };
Tensor activation(const Tensor& x, Activation kind, double negative_slope = 0.1);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- convolution / normalization ----
/// `bias` may be undefined; when present its shape is (1, O, 1, 1).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.03;
  double eps = 1e-3;
};
/// gamma/beta/running stats have shape (1, C, 1, 1). Training mode updates the
/// running statistics in place (unbiased variance, exponential moving average).
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, const BatchNormOptions& options);

/// Normalizes over the channel axis at every (b, h, w); gamma/beta are (1, C, 1, 1).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- pooling / resampling ----
enum class PoolKind { max, avg };
/// Max pooling pads with -inf and breaks ties toward the lowest flat index.
/// Average pooling divides by kernel*kernel (padding counts as zero).
Tensor pool2d(const Tensor& x, PoolKind kind, int kernel, int stride, int padding);
Tensor adaptive_avg_pool(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor upsample_nearest(const Tensor& x, int64_t out_h, int64_t out_w);

// ---- layout ----
Tensor concat(const std::vector<Tensor>& xs);
std::vector<Tensor> split(const Tensor& x, int64_t parts);
Tensor slice_channels(const Tensor& x, int64_t start, int64_t count);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::array<int, 4>& order);
/// out[i] = x[indices[i]], or 0 where indices[i] < 0. Backward scatters.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> indices,
              const Shape& out_shape);

// ---- attention primitives ----
/// Batched matrix product over the last two axes. `b` may have batch dims (1,1),
/// in which case it is shared by every batch entry of `a`.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

/// Additive mask over the last two axes, indexed by window = (batch index % windows).
struct AttentionMask {
  int64_t windows = 0;
  int64_t tokens = 0;
  std::vector<double> bias;  // windows * tokens * tokens
};
/// Softmax along the last axis, optionally adding `mask` to the logits first.
Tensor softmax(const Tensor& logits, const std::shared_ptr<const AttentionMask>& mask = nullptr);

/// Multi-head scaled dot-product attention on token tensors (N, 1, T, d).
/// When `weights_out` is given it receives the (N, heads, T, T) probabilities.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const std::shared_ptr<const AttentionMask>& mask = nullptr,
                 Tensor* weights_out = nullptr);

// ---- losses ----
/// Mean binary cross-entropy on logits; `targets` is a constant of the same shape.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace cstyolo
