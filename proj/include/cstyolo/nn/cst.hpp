#pragma once

#include <memory>
#include <vector>

#include "cstyolo/nn/blocks.hpp"

namespace cstyolo::nn {

/// Feature map tiled into M x M windows of tokens.
/// `windows` is (B * num_windows, 1, M * M, C), batch-major.
struct WindowGrid {
  Tensor windows;
  int window = 0;
  int shift = 0;
  Shape origin;
  int64_t padded_h = 0;
  int64_t padded_w = 0;

  int64_t windows_per_image() const { return (padded_h / window) * (padded_w / window); }
};

/// Zero-pads H and W up to multiples of `window`, rolls both axes by -shift
/// and tiles into windows.
WindowGrid window_partition(const Tensor& x, int window, int shift);
/// Exact inverse of window_partition.
Tensor window_reverse(const WindowGrid& grid);

/// Additive -100 mask for shifted windows: tokens of the same window that came
/// from different regions of the rolled map cannot attend to each other.
std::shared_ptr<const AttentionMask> shifted_window_mask(int64_t padded_h, int64_t padded_w,
                                                         int window, int shift);

/// LayerNorm -> (shifted) window attention -> residual -> LayerNorm -> MLP -> residual.
class SwinUnit : public Module {
 public:
  SwinUnit(int64_t channels, int window, int heads, int shift, Rng& rng, int mlp_ratio = 2);
  Tensor forward(const Tensor& x);
  /// Window attention on an already normalized map; returns a map.
  Tensor attend(const Tensor& normalized);

  int shift() const { return shift_; }
  /// Set to keep the attention probabilities of the last forward.
  bool record_attention = false;
  Tensor last_attention;
  std::shared_ptr<const AttentionMask> last_mask;

  Linear& q() { return *q_; }
  Linear& k() { return *k_; }
  Linear& v() { return *v_; }
  Linear& proj() { return *proj_; }
  LayerNorm& norm1() { return *norm1_; }

 private:
  int window_, heads_, shift_;
  int64_t mask_h_ = 0, mask_w_ = 0;
  LayerNorm *norm1_, *norm2_;
  Linear *q_, *k_, *v_, *proj_;
  Conv2d *fc1_, *fc2_;
};

/// Regular-window unit followed by shifted-window unit (shift = window / 2).
class SwinBlock : public Module {
 public:
  SwinBlock(int64_t channels, int window, int heads, Rng& rng);
  Tensor forward(const Tensor& x);
  SwinUnit& regular() { return *w_; }
  SwinUnit& shifted() { return *sw_; }

 private:
  SwinUnit* w_;
  SwinUnit* sw_;
};

/// Two parallel 1x1 CBS branches, one followed by a Swin block, concatenated
/// and merged back to c2 by a 1x1 CBS.
class Cst : public Module {
 public:
  Cst(int64_t c1, int64_t c2, Rng& rng, int window = 4, int heads = 4);
  Tensor forward(const Tensor& x);
  Tensor branch_a(const Tensor& x) { return a_->forward(x); }
  Tensor branch_b(const Tensor& x) { return swin_->forward(b_->forward(x)); }
  int64_t hidden() const { return hidden_; }

  Cbs& a() { return *a_; }
  Cbs& b() { return *b_; }
  SwinBlock& swin() { return *swin_; }

 private:
  int64_t hidden_;
  Cbs *a_, *b_, *merge_;
  SwinBlock* swin_;
};

inline constexpr double kWelanEpsilon = 1e-4;

/// w_i = max(raw_i, 0) / (sum_j max(raw_j, 0) + xi).
std::vector<double> welan_normalize(const std::vector<double>& raw, double xi = kWelanEpsilon);
/// Differentiable form over a (1, K, 1, 1) tensor of raw weights.
Tensor welan_normalize(const Tensor& raw, double xi = kWelanEpsilon);

/// ELAN whose taps are scaled by normalized learnable weights before the merge.
/// Variant 1 weights every tap; variant 2 weights only the 3x3-stack taps.
class WElan : public Module {
 public:
  WElan(const ElanPlan& plan, int variant, Rng& rng, double xi = kWelanEpsilon);
  Tensor forward(const Tensor& x);
  /// Scaled taps in concatenation order.
  std::vector<Tensor> weighted_taps(const Tensor& x);

  Tensor& raw_weights() { return *raw_; }
  Elan& elan() { return *elan_; }
  int variant() const { return variant_; }

 private:
  int variant_;
  double xi_;
  Elan* elan_;
  Tensor* raw_;
};

/// Multiscale channel split: pooled pyramid -> per-level 1x1 to `mid` channels
/// -> upsample and concatenate -> sigmoid channel gate -> split into four and
/// sum -> 1x1 back to c -> residual.
class Mcs : public Module {
 public:
  /// The final 1x1 conv starts at zero, so a fresh module is the identity.
  Mcs(int64_t channels, Rng& rng, std::vector<int64_t> levels = {1, 2, 3, 6}, int64_t mid = 256);
  Tensor forward(const Tensor& x);
  /// Gate values (B, 4 * mid, 1, 1) for input x.
  Tensor gate(const Tensor& x);

  Conv2d& final_conv() { return *out_; }
  int64_t mid() const { return mid_; }

 private:
  Tensor pyramid(const Tensor& x);
  Tensor gate_from(const Tensor& stacked);

  std::vector<int64_t> levels_;
  int64_t mid_;
  std::vector<Conv2d*> level_convs_;
  Conv2d* gate_;
  Conv2d* out_;
};

/// Neck downsampling: [1x1 -> 3x3 s2] concatenated with a 3x3 s2 branch of
/// doubled width. Output has 3 * hidden channels.
class CatConv : public Module {
 public:
  CatConv(int64_t c1, int64_t hidden, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor branch_a(const Tensor& x) { return a2_->forward(a1_->forward(x)); }
  Tensor branch_b(const Tensor& x) { return b_->forward(x); }
  int64_t out_channels() const { return 3 * hidden_; }

 private:
  int64_t hidden_;
  Cbs *a1_, *a2_, *b_;
};

}  // namespace cstyolo::nn
