#include "cstyolo/nn/cst.hpp"

#include <algorithm>

#include "cstyolo/errors.hpp"

namespace cstyolo::nn {

namespace {

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

}  // namespace

WindowGrid window_partition(const Tensor& x, int window, int shift) {
  if (window < 1) throw ShapeError("window_partition: window must be >= 1");
  if (shift < 0 || shift >= window) throw ShapeError("window_partition: shift must be in [0, window)");
  const Shape& s = x.shape();
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  const int64_t M = window;
  const int64_t Hp = round_up(H, M), Wp = round_up(W, M);
  const int64_t nwy = Hp / M, nwx = Wp / M, T = M * M;
  auto idx = std::make_shared<std::vector<int64_t>>(B * nwy * nwx * T * C);
  int64_t o = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t wy = 0; wy < nwy; ++wy)
      for (int64_t wx = 0; wx < nwx; ++wx)
        for (int64_t i = 0; i < M; ++i)
          for (int64_t j = 0; j < M; ++j) {
            const int64_t sy = (wy * M + i + shift) % Hp;
            const int64_t sx = (wx * M + j + shift) % Wp;
            const bool pad = sy >= H || sx >= W;
            for (int64_t c = 0; c < C; ++c) {
              (*idx)[o++] = pad ? -1 : ((b * C + c) * H + sy) * W + sx;
            }
          }
  WindowGrid g;
  g.windows = gather(x, idx, {B * nwy * nwx, 1, T, C});
  g.window = window;
  g.shift = shift;
  g.origin = s;
  g.padded_h = Hp;
  g.padded_w = Wp;
  return g;
}

Tensor window_reverse(const WindowGrid& g) {
  const Shape& s = g.origin;
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  const int64_t M = g.window;
  if (M < 1 || g.padded_h != round_up(H, M) || g.padded_w != round_up(W, M) || g.shift < 0 ||
      g.shift >= M) {
    throw ContractError("window_reverse: grid geometry does not match its origin shape");
  }
  const int64_t Hp = g.padded_h, Wp = g.padded_w;
  const int64_t nwx = Wp / M, nw = (Hp / M) * nwx, T = M * M;
  if (!(g.windows.shape() == Shape{B * nw, 1, T, C})) {
    throw ContractError("window_reverse: windows " + g.windows.shape().str() +
                        " inconsistent with origin " + s.str());
  }
  auto idx = std::make_shared<std::vector<int64_t>>(s.numel());
  int64_t o = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const int64_t py = (y - g.shift + Hp) % Hp;
          const int64_t px = (x - g.shift + Wp) % Wp;
          const int64_t n = b * nw + (py / M) * nwx + px / M;
          const int64_t t = (py % M) * M + px % M;
          (*idx)[o++] = (n * T + t) * C + c;
        }
  return gather(g.windows, idx, s);
}

std::shared_ptr<const AttentionMask> shifted_window_mask(int64_t padded_h, int64_t padded_w,
                                                         int window, int shift) {
  if (shift == 0) return nullptr;
  const int64_t M = window, T = M * M;
  const int64_t nwy = padded_h / M, nwx = padded_w / M;
  auto region = [&](int64_t p, int64_t extent) {
    if (p < extent - M) return 0;
    return p < extent - shift ? 1 : 2;
  };
  auto mask = std::make_shared<AttentionMask>();
  mask->windows = nwy * nwx;
  mask->tokens = T;
  mask->bias.assign(mask->windows * T * T, 0.0);
  std::vector<int> label(T);
  for (int64_t wy = 0; wy < nwy; ++wy)
    for (int64_t wx = 0; wx < nwx; ++wx) {
      for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < M; ++j) {
          label[i * M + j] = region(wy * M + i, padded_h) * 3 + region(wx * M + j, padded_w);
        }
      double* bias = mask->bias.data() + (wy * nwx + wx) * T * T;
      for (int64_t a = 0; a < T; ++a)
        for (int64_t b = 0; b < T; ++b) bias[a * T + b] = label[a] == label[b] ? 0.0 : -100.0;
    }
  return mask;
}

SwinUnit::SwinUnit(int64_t channels, int window, int heads, int shift, Rng& rng, int mlp_ratio)
    : window_(window), heads_(heads), shift_(shift) {
  if (heads < 1 || channels % heads != 0) {
    throw ShapeError("swin: channels " + std::to_string(channels) + " not divisible by heads " +
                     std::to_string(heads));
  }
  norm1_ = &add_module("norm1", std::make_unique<LayerNorm>(channels));
  q_ = &add_module("q", std::make_unique<Linear>(channels, channels, rng));
  k_ = &add_module("k", std::make_unique<Linear>(channels, channels, rng));
  v_ = &add_module("v", std::make_unique<Linear>(channels, channels, rng));
  proj_ = &add_module("proj", std::make_unique<Linear>(channels, channels, rng));
  norm2_ = &add_module("norm2", std::make_unique<LayerNorm>(channels));
  const int64_t hidden = channels * mlp_ratio;
  fc1_ = &add_module("fc1", std::make_unique<Conv2d>(channels, hidden, 1, 1, 0, true, rng));
  fc2_ = &add_module("fc2", std::make_unique<Conv2d>(hidden, channels, 1, 1, 0, true, rng));
}

Tensor SwinUnit::attend(const Tensor& normalized) {
  WindowGrid g = window_partition(normalized, window_, shift_);
  if (shift_ > 0 && (mask_h_ != g.padded_h || mask_w_ != g.padded_w)) {
    last_mask = shifted_window_mask(g.padded_h, g.padded_w, window_, shift_);
    mask_h_ = g.padded_h;
    mask_w_ = g.padded_w;
  }
  const Tensor& t = g.windows;
  Tensor a = attention(q_->forward(t), k_->forward(t), v_->forward(t), heads_,
                       shift_ > 0 ? last_mask : nullptr,
                       record_attention ? &last_attention : nullptr);
  g.windows = proj_->forward(a);
  return window_reverse(g);
}

Tensor SwinUnit::forward(const Tensor& x) {
  Tensor h = add(x, attend(norm1_->forward(x)));
  return add(h, fc2_->forward(silu(fc1_->forward(norm2_->forward(h)))));
}

SwinBlock::SwinBlock(int64_t channels, int window, int heads, Rng& rng) {
  w_ = &add_module("w_msa", std::make_unique<SwinUnit>(channels, window, heads, 0, rng));
  sw_ = &add_module("sw_msa", std::make_unique<SwinUnit>(channels, window, heads, window / 2, rng));
}

Tensor SwinBlock::forward(const Tensor& x) { return sw_->forward(w_->forward(x)); }

Cst::Cst(int64_t c1, int64_t c2, Rng& rng, int window, int heads) : hidden_(c2 / 2) {
  if (hidden_ < 1) throw ConfigError("cst: output width too small");
  a_ = &add_module("a", std::make_unique<Cbs>(c1, hidden_, 1, 1, rng));
  b_ = &add_module("b", std::make_unique<Cbs>(c1, hidden_, 1, 1, rng));
  swin_ = &add_module("swin", std::make_unique<SwinBlock>(hidden_, window, heads, rng));
  merge_ = &add_module("merge", std::make_unique<Cbs>(2 * hidden_, c2, 1, 1, rng));
}

Tensor Cst::forward(const Tensor& x) {
  return merge_->forward(concat({branch_a(x), branch_b(x)}));
}

std::vector<double> welan_normalize(const std::vector<double>& raw, double xi) {
  std::vector<double> r(raw.size());
  double total = 0;
  for (size_t i = 0; i < raw.size(); ++i) {
    r[i] = std::max(raw[i], 0.0);
    total += r[i];
  }
  for (double& v : r) v /= total + xi;
  return r;
}

Tensor welan_normalize(const Tensor& raw, double xi) {
  Tensor r = relu(raw);
  return div(r, add_scalar(sum(r), xi));
}

WElan::WElan(const ElanPlan& plan, int variant, Rng& rng, double xi) : variant_(variant), xi_(xi) {
  if (variant != 1 && variant != 2) throw ConfigError("welan: variant must be 1 or 2");
  elan_ = &add_module("elan", std::make_unique<Elan>(plan, rng));
  const int64_t k = variant == 1 ? elan_->tap_count() : elan_->deep_tap_count();
  raw_ = &add_parameter("fusion_weight", Tensor::full({1, k, 1, 1}, 1.0), ParamKind::other);
}

std::vector<Tensor> WElan::weighted_taps(const Tensor& x) {
  std::vector<Tensor> taps = elan_->taps(x);
  Tensor w = welan_normalize(*raw_, xi_);
  for (int64_t t = 0; t < raw_->shape()[1]; ++t) taps[t] = mul(taps[t], slice_channels(w, t, 1));
  return taps;
}

Tensor WElan::forward(const Tensor& x) { return elan_->merge(concat(weighted_taps(x))); }

Mcs::Mcs(int64_t channels, Rng& rng, std::vector<int64_t> levels, int64_t mid)
    : levels_(std::move(levels)), mid_(mid) {
  if (levels_.empty()) throw ConfigError("mcs: at least one pyramid level is required");
  for (size_t i = 0; i < levels_.size(); ++i) {
    level_convs_.push_back(&add_module("level" + std::to_string(i),
                                       std::make_unique<Conv2d>(channels, mid, 1, 1, 0, true, rng)));
  }
  const int64_t stacked = mid * static_cast<int64_t>(levels_.size());
  gate_ = &add_module("gate", std::make_unique<Conv2d>(stacked, stacked, 1, 1, 0, true, rng));
  out_ = &add_module("out", std::make_unique<Conv2d>(mid, channels, 1, 1, 0, true, rng));
  out_->weight() = Tensor::zeros(out_->weight().shape()).set_requires_grad(true);
  out_->bias() = Tensor::zeros(out_->bias().shape()).set_requires_grad(true);
}

Tensor Mcs::pyramid(const Tensor& x) {
  const Shape& s = x.shape();
  std::vector<Tensor> parts;
  for (size_t i = 0; i < levels_.size(); ++i) {
    Tensor p = level_convs_[i]->forward(adaptive_avg_pool(x, levels_[i], levels_[i]));
    parts.push_back(upsample_nearest(p, s[2], s[3]));
  }
  return concat(parts);
}

Tensor Mcs::gate_from(const Tensor& stacked) {
  return sigmoid(gate_->forward(adaptive_avg_pool(stacked, 1, 1)));
}

Tensor Mcs::gate(const Tensor& x) { return gate_from(pyramid(x)); }

Tensor Mcs::forward(const Tensor& x) {
  Tensor stacked = pyramid(x);
  auto parts = split(mul(stacked, gate_from(stacked)), static_cast<int64_t>(levels_.size()));
  Tensor fused = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) fused = add(fused, parts[i]);
  return add(x, out_->forward(fused));
}

CatConv::CatConv(int64_t c1, int64_t hidden, Rng& rng) : hidden_(hidden) {
  a1_ = &add_module("a1", std::make_unique<Cbs>(c1, hidden, 1, 1, rng));
  a2_ = &add_module("a2", std::make_unique<Cbs>(hidden, hidden, 3, 2, rng));
  b_ = &add_module("b", std::make_unique<Cbs>(c1, 2 * hidden, 3, 2, rng));
}

Tensor CatConv::forward(const Tensor& x) { return concat({branch_a(x), branch_b(x)}); }

}  // namespace cstyolo::nn
