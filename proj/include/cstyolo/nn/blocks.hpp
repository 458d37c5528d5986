#pragma once

#include <vector>

#include "cstyolo/nn/layers.hpp"

namespace cstyolo::nn {

/// Conv (no bias) -> BatchNorm -> SiLU, padded by k/2.
class Cbs : public Module {
 public:
  Cbs(int64_t c1, int64_t c2, int k, int s, Rng& rng);
  Tensor forward(const Tensor& x);

  Conv2d& conv() { return *conv_; }
  BatchNorm2d& bn() { return *bn_; }

 private:
  Conv2d* conv_;
  BatchNorm2d* bn_;
};

/// Channel plan of an ELAN block.
///   split:  width of the two 1x1 entry convs
///   deep:   width of each stacked 3x3 conv
///   depth:  number of stacked 3x3 convs
///   deep_taps: indices into the 3x3 stack that are concatenated, listed in
///              concatenation order (the two 1x1 outputs follow them)
struct ElanPlan {
  int64_t c1 = 0;
  int64_t split = 0;
  int64_t deep = 0;
  int depth = 4;
  std::vector<int> deep_taps;
  int64_t c2 = 0;

  int64_t concat_channels() const {
    return 2 * split + deep * static_cast<int64_t>(deep_taps.size());
  }
  /// Backbone ELAN: four taps (stack outputs 3 and 1, then both 1x1 entries).
  static ElanPlan backbone(int64_t c1, int64_t hidden, int64_t c2);
  /// Head ELAN-H: six taps (all four stack outputs at half width).
  static ElanPlan head(int64_t c1, int64_t hidden, int64_t c2);
};

class Elan : public Module {
 public:
  Elan(const ElanPlan& plan, Rng& rng);
  Tensor forward(const Tensor& x);
  /// Tap maps in concatenation order: deep taps first, then the second and
  /// first 1x1 entries.
  std::vector<Tensor> taps(const Tensor& x);
  Tensor merge(const Tensor& concatenated) { return merge_->forward(concatenated); }

  const ElanPlan& plan() const { return plan_; }
  int tap_count() const { return static_cast<int>(plan_.deep_taps.size()) + 2; }
  int deep_tap_count() const { return static_cast<int>(plan_.deep_taps.size()); }
  std::vector<Cbs*>& stack() { return stack_; }

 private:
  ElanPlan plan_;
  Cbs* entry1_;
  Cbs* entry2_;
  std::vector<Cbs*> stack_;
  Cbs* merge_;
};

/// Spatial pyramid pooling with a cross-stage partial shortcut; hidden width equals c2.
class Sppcspc : public Module {
 public:
  Sppcspc(int64_t c1, int64_t c2, Rng& rng, std::vector<int> pool_kernels = {5, 9, 13});
  Tensor forward(const Tensor& x);
  /// x followed by stride-1 max pools of each kernel, padded k/2.
  static std::vector<Tensor> pyramid(const Tensor& x, const std::vector<int>& kernels);

 private:
  std::vector<int> kernels_;
  Cbs *cv1_, *cv2_, *cv3_, *cv4_, *cv5_, *cv6_, *cv7_;
};

/// Conv weight and bias of a BatchNorm folded into its conv.
struct FusedKernel {
  Tensor weight;
  Tensor bias;
};

/// Folds eval-mode BatchNorm statistics into a bias-free conv.
FusedKernel fold_batchnorm(const Tensor& conv_weight, BatchNorm2d& bn);
/// Zero-pads a (O, C, 1, 1) kernel to (O, C, 3, 3), centred.
Tensor pad_kernel_1x1_to_3x3(const Tensor& w);

/// 3x3+BN and 1x1+BN branches summed, then SiLU. The identity branch is only
/// constructible so that fusing it can be rejected.
class RepConv : public Module {
 public:
  RepConv(int64_t c1, int64_t c2, int s, Rng& rng, bool identity_branch = false);
  Tensor forward(const Tensor& x);

  /// Single 3x3 kernel equivalent to the eval-mode train form.
  FusedKernel fused_kernel();
  /// Replaces both branches by the fused conv.
  void fuse();
  bool is_fused() const { return fused_ != nullptr; }
  bool has_identity() const { return identity_ != nullptr; }

  Conv2d& dense_conv() { return *dense_conv_; }
  BatchNorm2d& dense_bn() { return *dense_bn_; }
  Conv2d& pointwise_conv() { return *pw_conv_; }
  BatchNorm2d& pointwise_bn() { return *pw_bn_; }

 private:
  int64_t c1_, c2_;
  int s_;
  Conv2d* dense_conv_ = nullptr;
  BatchNorm2d* dense_bn_ = nullptr;
  Conv2d* pw_conv_ = nullptr;
  BatchNorm2d* pw_bn_ = nullptr;
  BatchNorm2d* identity_ = nullptr;
  Conv2d* fused_ = nullptr;
};

enum class DownKind { maxpool, cbs };

/// Two-branch stride-2 downsampling: [1x1 -> 3x3 s2] concatenated with
/// [reduce -> 1x1], where reduce is a 2x2 max pool (MPCConv) or a 3x3 s2 CBS
/// keeping the channel count (CBSConcat). Output has 2 * hidden channels.
class MpConv : public Module {
 public:
  MpConv(int64_t c1, int64_t hidden, DownKind kind, Rng& rng);
  Tensor forward(const Tensor& x);
  int64_t out_channels() const { return 2 * hidden_; }

 private:
  DownKind kind_;
  int64_t hidden_;
  Cbs* reduce_ = nullptr;
  Cbs* side_;
  Cbs* entry_;
  Cbs* down_;
};

}  // namespace cstyolo::nn
