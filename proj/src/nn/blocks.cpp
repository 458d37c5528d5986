#include "cstyolo/nn/blocks.hpp"

#include <cmath>

#include "cstyolo/errors.hpp"

namespace cstyolo::nn {

Cbs::Cbs(int64_t c1, int64_t c2, int k, int s, Rng& rng) {
  conv_ = &add_module("conv", std::make_unique<Conv2d>(c1, c2, k, s, k / 2, false, rng));
  bn_ = &add_module("bn", std::make_unique<BatchNorm2d>(c2));
}

Tensor Cbs::forward(const Tensor& x) { return silu(bn_->forward(conv_->forward(x))); }

ElanPlan ElanPlan::backbone(int64_t c1, int64_t hidden, int64_t c2) {
  return {c1, hidden, hidden, 4, {3, 1}, c2};
}

ElanPlan ElanPlan::head(int64_t c1, int64_t hidden, int64_t c2) {
  return {c1, hidden, hidden / 2, 4, {3, 2, 1, 0}, c2};
}

Elan::Elan(const ElanPlan& plan, Rng& rng) : plan_(plan) {
  if (plan.depth < 1 || plan.split < 1 || plan.deep < 1 || plan.c2 < 1) {
    throw ConfigError("elan: widths and depth must be positive");
  }
  for (int t : plan.deep_taps) {
    if (t < 0 || t >= plan.depth) throw ConfigError("elan: deep tap index out of range");
  }
  entry1_ = &add_module("cv1", std::make_unique<Cbs>(plan.c1, plan.split, 1, 1, rng));
  entry2_ = &add_module("cv2", std::make_unique<Cbs>(plan.c1, plan.split, 1, 1, rng));
  int64_t c = plan.split;
  for (int i = 0; i < plan.depth; ++i) {
    stack_.push_back(
        &add_module("m" + std::to_string(i), std::make_unique<Cbs>(c, plan.deep, 3, 1, rng)));
    c = plan.deep;
  }
  merge_ = &add_module("merge",
                       std::make_unique<Cbs>(plan.concat_channels(), plan.c2, 1, 1, rng));
}

std::vector<Tensor> Elan::taps(const Tensor& x) {
  Tensor a = entry1_->forward(x);
  Tensor b = entry2_->forward(x);
  std::vector<Tensor> stack_out;
  Tensor h = b;
  for (Cbs* m : stack_) {
    h = m->forward(h);
    stack_out.push_back(h);
  }
  std::vector<Tensor> out;
  for (int t : plan_.deep_taps) out.push_back(stack_out[t]);
  out.push_back(b);
  out.push_back(a);
  return out;
}

Tensor Elan::forward(const Tensor& x) { return merge_->forward(concat(taps(x))); }

Sppcspc::Sppcspc(int64_t c1, int64_t c2, Rng& rng, std::vector<int> pool_kernels)
    : kernels_(std::move(pool_kernels)) {
  for (int k : kernels_) {
    if (k < 1 || k % 2 == 0) throw ConfigError("sppcspc: pool kernels must be odd");
  }
  const int64_t h = c2;
  cv1_ = &add_module("cv1", std::make_unique<Cbs>(c1, h, 1, 1, rng));
  cv2_ = &add_module("cv2", std::make_unique<Cbs>(c1, h, 1, 1, rng));
  cv3_ = &add_module("cv3", std::make_unique<Cbs>(h, h, 3, 1, rng));
  cv4_ = &add_module("cv4", std::make_unique<Cbs>(h, h, 1, 1, rng));
  cv5_ = &add_module("cv5", std::make_unique<Cbs>(h * static_cast<int64_t>(kernels_.size() + 1),
                                                  h, 1, 1, rng));
  cv6_ = &add_module("cv6", std::make_unique<Cbs>(h, h, 3, 1, rng));
  cv7_ = &add_module("cv7", std::make_unique<Cbs>(2 * h, c2, 1, 1, rng));
}

std::vector<Tensor> Sppcspc::pyramid(const Tensor& x, const std::vector<int>& kernels) {
  std::vector<Tensor> out{x};
  for (int k : kernels) out.push_back(pool2d(x, PoolKind::max, k, 1, k / 2));
  return out;
}

Tensor Sppcspc::forward(const Tensor& x) {
  Tensor x1 = cv4_->forward(cv3_->forward(cv1_->forward(x)));
  Tensor y1 = cv6_->forward(cv5_->forward(concat(pyramid(x1, kernels_))));
  Tensor y2 = cv2_->forward(x);
  return cv7_->forward(concat({y1, y2}));
}

FusedKernel fold_batchnorm(const Tensor& conv_weight, BatchNorm2d& bn) {
  const Shape& s = conv_weight.shape();
  const int64_t per_out = s.numel() / s[0];
  const auto w = conv_weight.to_vector();
  const auto gamma = bn.gamma().to_vector();
  const auto beta = bn.beta().to_vector();
  const auto mu = bn.running_mean().to_vector();
  const auto var = bn.running_var().to_vector();
  std::vector<double> fw(w.size()), fb(s[0]);
  for (int64_t o = 0; o < s[0]; ++o) {
    const double k = gamma[o] / std::sqrt(var[o] + bn.eps());
    for (int64_t i = 0; i < per_out; ++i) fw[o * per_out + i] = w[o * per_out + i] * k;
    fb[o] = beta[o] - mu[o] * k;
  }
  const DType dt = conv_weight.dtype();
  return {Tensor::from_values(s, fw, dt), Tensor::from_values({1, s[0], 1, 1}, fb, dt)};
}

Tensor pad_kernel_1x1_to_3x3(const Tensor& w) {
  const Shape& s = w.shape();
  if (s[2] != 1 || s[3] != 1) throw ShapeError("pad_kernel_1x1_to_3x3: expected a 1x1 kernel");
  const auto v = w.to_vector();
  std::vector<double> out(s[0] * s[1] * 9, 0.0);
  for (int64_t i = 0; i < s[0] * s[1]; ++i) out[i * 9 + 4] = v[i];
  return Tensor::from_values({s[0], s[1], 3, 3}, out, w.dtype());
}

RepConv::RepConv(int64_t c1, int64_t c2, int s, Rng& rng, bool identity_branch)
    : c1_(c1), c2_(c2), s_(s) {
  dense_conv_ = &add_module("dense_conv", std::make_unique<Conv2d>(c1, c2, 3, s, 1, false, rng));
  dense_bn_ = &add_module("dense_bn", std::make_unique<BatchNorm2d>(c2));
  pw_conv_ = &add_module("pw_conv", std::make_unique<Conv2d>(c1, c2, 1, s, 0, false, rng));
  pw_bn_ = &add_module("pw_bn", std::make_unique<BatchNorm2d>(c2));
  if (identity_branch) {
    if (c1 != c2 || s != 1) throw ConfigError("repconv: identity branch needs c1 == c2 and s == 1");
    identity_ = &add_module("identity_bn", std::make_unique<BatchNorm2d>(c2));
  }
}

Tensor RepConv::forward(const Tensor& x) {
  if (fused_) return silu(fused_->forward(x));
  Tensor y = add(dense_bn_->forward(dense_conv_->forward(x)), pw_bn_->forward(pw_conv_->forward(x)));
  if (identity_) y = add(y, identity_->forward(x));
  return silu(y);
}

FusedKernel RepConv::fused_kernel() {
  if (fused_) return {fused_->weight().detach(), fused_->bias().detach()};
  if (identity_) throw ContractError("repconv: cannot fuse a block with an identity branch");
  FusedKernel d = fold_batchnorm(dense_conv_->weight(), *dense_bn_);
  FusedKernel p = fold_batchnorm(pw_conv_->weight(), *pw_bn_);
  NoGradGuard guard;
  return {add(d.weight, pad_kernel_1x1_to_3x3(p.weight)), add(d.bias, p.bias)};
}

void RepConv::fuse() {
  if (fused_) return;
  FusedKernel k = fused_kernel();
  Rng rng(0);
  auto conv = std::make_unique<Conv2d>(c1_, c2_, 3, s_, 1, true, rng);
  conv->weight() = k.weight.set_requires_grad(true);
  conv->bias() = k.bias.set_requires_grad(true);
  remove_module("dense_conv");
  remove_module("dense_bn");
  remove_module("pw_conv");
  remove_module("pw_bn");
  dense_conv_ = nullptr;
  dense_bn_ = nullptr;
  pw_conv_ = nullptr;
  pw_bn_ = nullptr;
  fused_ = &add_module("fused", std::move(conv));
}

MpConv::MpConv(int64_t c1, int64_t hidden, DownKind kind, Rng& rng) : kind_(kind), hidden_(hidden) {
  if (kind == DownKind::cbs) reduce_ = &add_module("reduce", std::make_unique<Cbs>(c1, c1, 3, 2, rng));
  side_ = &add_module("side", std::make_unique<Cbs>(c1, hidden, 1, 1, rng));
  entry_ = &add_module("entry", std::make_unique<Cbs>(c1, hidden, 1, 1, rng));
  down_ = &add_module("down", std::make_unique<Cbs>(hidden, hidden, 3, 2, rng));
}

Tensor MpConv::forward(const Tensor& x) {
  Tensor r = kind_ == DownKind::maxpool ? pool2d(x, PoolKind::max, 2, 2, 0) : reduce_->forward(x);
  return concat({down_->forward(entry_->forward(x)), side_->forward(r)});
}

}  // namespace cstyolo::nn
