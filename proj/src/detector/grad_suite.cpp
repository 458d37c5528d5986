#include "cstyolo/grad_suite.hpp"

#include "cstyolo/loss.hpp"
#include "cstyolo/nn/blocks.hpp"
#include "cstyolo/nn/cst.hpp"

namespace cstyolo {

namespace {

Tensor randn(const Shape& s, uint64_t seed) {
  Rng rng(seed);
  return Tensor::normal(s, 0.0, 1.0, rng, DType::f64);
}

Tensor leaf(Tensor t) { return t.set_requires_grad(true); }

// Values at least `gap` away from zero, for ops with a kink there.
Tensor away_from_zero(const Shape& s, uint64_t seed, double gap) {
  std::vector<double> v = randn(s, seed).to_vector();
  for (double& x : v) x += x < 0 ? -gap : gap;
  return leaf(Tensor::from_values(s, v, DType::f64));
}

struct Suite {
  uint64_t seed;
  const std::function<void(const GradSuiteEntry&)>& progress;
  std::vector<GradSuiteEntry> entries;

  void run(const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> in,
           double tol = 1e-4, int64_t probes = 0) {
    GradCheckOptions opt;
    opt.max_probes_per_tensor = probes;
    opt.seed = seed;
    GradSuiteEntry e{check_gradients(name, f, std::move(in), opt), tol};
    if (progress) progress(e);
    entries.push_back(e);
  }

  template <class M>
  void module(const std::string& name, M& m, const Tensor& x, int64_t probes = 6) {
    m.to(DType::f64);
    std::vector<Tensor> in{x};
    for (auto& p : m.parameters()) in.push_back(*p.tensor);
    const uint64_t proj = seed + 7;
    run(name, [&] { return random_projection(m.forward(x), proj); }, in, 1e-4, probes);
  }
};

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(
    uint64_t seed, const std::function<void(const GradSuiteEntry&)>& progress) {
  Suite suite{seed, progress, {}};
  const uint64_t s = seed * 1000 + 100;
  const int64_t B = 2, C = 3, H = 6, W = 5;
  Tensor x = leaf(randn({B, C, H, W}, s));
  Tensor x2 = leaf(randn({B, C, H, W}, s + 1));
  Tensor pos = leaf(add_scalar(square(randn({B, C, H, W}, s + 2)), 0.5).detach());
  Tensor kinked = away_from_zero({B, C, H, W}, s + 3, 0.05);
  Tensor cv = leaf(randn({1, C, 1, 1}, s + 4));
  Tensor g = leaf(add_scalar(randn({1, C, 1, 1}, s + 5), 1.5).detach());
  Tensor bt = leaf(randn({1, C, 1, 1}, s + 6));
  Tensor w = leaf(randn({4, C, 3, 3}, s + 7));
  Tensor bias = leaf(randn({1, 4, 1, 1}, s + 8));
  Tensor w1 = leaf(randn({4, C, 1, 1}, s + 9));
  Tensor rm = Tensor::zeros({1, C, 1, 1}, DType::f64);
  Tensor rv = Tensor::full({1, C, 1, 1}, 1.0, DType::f64);
  auto P = [s](const Tensor& t) { return random_projection(t, s + 50); };

  suite.run("add", [&] { return P(add(x, cv)); }, {x, cv});
  suite.run("sub", [&] { return P(sub(x, x2)); }, {x, x2});
  suite.run("mul", [&] { return P(mul(x, cv)); }, {x, cv});
  suite.run("div", [&] { return P(div(x, pos)); }, {x, pos});
  suite.run("minimum", [&] { return P(minimum(x, x2)); }, {x, x2});
  suite.run("maximum", [&] { return P(maximum(x, x2)); }, {x, x2});
  suite.run("scale", [&] { return P(scale(x, -1.7)); }, {x});
  suite.run("add_scalar", [&] { return P(add_scalar(x, 0.3)); }, {x});
  suite.run("neg", [&] { return P(neg(x)); }, {x});
  suite.run("square", [&] { return P(square(x)); }, {x});
  suite.run("sqrt", [&] { return P(sqrt(pos)); }, {pos});
  suite.run("exp", [&] { return P(exp(x)); }, {x});
  suite.run("log", [&] { return P(log(pos)); }, {pos});
  suite.run("atan", [&] { return P(atan(x)); }, {x});
  suite.run("clamp_min", [&] { return P(clamp_min(kinked, 0.0)); }, {kinked});
  suite.run("sigmoid", [&] { return P(sigmoid(x)); }, {x});
  suite.run("silu", [&] { return P(silu(x)); }, {x});
  suite.run("relu", [&] { return P(relu(kinked)); }, {kinked});
  suite.run("leaky_relu", [&] { return P(activation(kinked, Activation::leaky_relu)); }, {kinked});
  suite.run("sum", [&] { return sum(square(x)); }, {x});
  suite.run("mean", [&] { return mean(square(x)); }, {x});
  suite.run("conv2d", [&] { return P(conv2d(x, w, bias, 2, 1)); }, {x, w, bias});
  suite.run("conv2d_1x1", [&] { return P(conv2d(x, w1, bias, 1, 0)); }, {x, w1, bias});
  suite.run("batchnorm_train", [&] { return P(batchnorm2d(x, g, bt, rm, rv, {true, 0.03, 1e-3})); },
            {x, g, bt});
  suite.run("batchnorm_eval", [&] { return P(batchnorm2d(x, g, bt, rm, rv, {false, 0.03, 1e-3})); },
            {x, g, bt});
  suite.run("layer_norm", [&] { return P(layer_norm(x, g, bt)); }, {x, g, bt});
  suite.run("max_pool", [&] { return P(pool2d(x, PoolKind::max, 3, 1, 1)); }, {x});
  suite.run("avg_pool", [&] { return P(pool2d(x, PoolKind::avg, 2, 2, 0)); }, {x});
  suite.run("adaptive_avg_pool", [&] { return P(adaptive_avg_pool(x, 4, 2)); }, {x});
  suite.run("upsample_nearest", [&] { return P(upsample_nearest(x, 2 * H, W + 3)); }, {x});
  suite.run("concat", [&] { return P(concat({x, x2})); }, {x, x2});
  suite.run("split", [&] {
    auto parts = split(concat({x, x2}), 2);
    return add(P(parts[0]), P(square(parts[1])));
  }, {x, x2});
  suite.run("slice_channels", [&] { return P(slice_channels(x, 1, 2)); }, {x});
  suite.run("reshape", [&] { return P(square(reshape(x, {1, B * C, W, H}))); }, {x});
  suite.run("permute", [&] { return P(permute(x, {3, 1, 0, 2})); }, {x});
  {
    auto idx = std::make_shared<std::vector<int64_t>>();
    for (int64_t i = 0; i < 40; ++i) idx->push_back(i % 7 == 3 ? -1 : (i * 13) % x.numel());
    suite.run("gather", [&, idx] { return P(gather(x, idx, {1, 1, 1, 40})); }, {x});
  }
  suite.run("matmul", [&] { return P(matmul(x, x2, false, true)); }, {x, x2});
  suite.run("matmul_ta", [&] { return P(matmul(x, x2, true, false)); }, {x, x2});
  suite.run("softmax", [&] { return P(softmax(x)); }, {x});
  {
    Tensor q = leaf(randn({2, 1, 4, 8}, s + 20));
    Tensor k = leaf(randn({2, 1, 4, 8}, s + 21));
    Tensor v = leaf(randn({2, 1, 4, 8}, s + 22));
    auto mask = std::make_shared<AttentionMask>();
    mask->windows = 2;
    mask->tokens = 4;
    mask->bias.assign(2 * 16, 0.0);
    mask->bias[1] = -100;
    mask->bias[20] = -100;
    suite.run("masked_softmax", [&] { return P(softmax(matmul(q, k, false, true), mask)); }, {q, k});
    suite.run("attention", [&] { return P(attention(q, k, v, 2, mask)); }, {q, k, v});
  }
  suite.run("bce_with_logits", [&] { return bce_with_logits(x, sigmoid(x2).detach()); }, {x});

  Rng rng(seed + 1);
  Tensor fx = leaf(randn({2, 8, 8, 8}, s + 30));
  {
    nn::Cbs m(8, 6, 3, 2, rng);
    suite.module("cbs", m, fx);
  }
  {
    nn::Elan m(nn::ElanPlan::backbone(8, 4, 8), rng);
    suite.module("elan", m, fx);
  }
  {
    nn::Sppcspc m(8, 8, rng, {3, 5});
    suite.module("sppcspc", m, fx);
  }
  {
    nn::RepConv m(8, 8, 1, rng);
    suite.module("repconv", m, fx);
  }
  {
    nn::MpConv m(8, 4, nn::DownKind::maxpool, rng);
    suite.module("mpconv", m, fx);
  }
  {
    nn::SwinBlock m(8, 4, 2, rng);
    suite.module("swin_block", m, fx);
  }
  {
    nn::Cst m(8, 8, rng, 4, 2);
    suite.module("cst_forward", m, fx);
  }
  for (int variant : {1, 2}) {
    nn::WElan m(nn::ElanPlan::backbone(8, 4, 8), variant, rng);
    suite.module("welan_forward_v" + std::to_string(variant), m, fx);
  }
  {
    nn::Mcs m(8, rng);
    Tensor& out_w = m.final_conv().weight();
    out_w = Tensor::normal(out_w.shape(), 0, 0.1, rng).set_requires_grad(true);
    suite.module("mcs_forward", m, fx);
  }
  {
    nn::CatConv m(8, 4, rng);
    suite.module("catconv_forward", m, fx);
  }

  {
    const NetworkConfig cfg = builtin_config("cst-yolo", 3, 0.125, 64);
    std::vector<Tensor> raw;
    for (int sc = 0; sc < 3; ++sc) {
      const int64_t grid = cfg.input_size / cfg.strides[sc];
      raw.push_back(leaf(randn({2, 3 * cfg.outputs_per_anchor(), grid, grid}, s + 40 + sc)));
    }
    const std::vector<TargetBox> targets{{0, 1, 0.3, 0.6, 0.2, 0.15}, {1, 2, 0.7, 0.25, 0.08, 0.1}};
    const auto assigned = build_targets(raw, targets, cfg);
    const auto obj = objectness_targets(raw, assigned);
    suite.run("compute_loss", [&] { return loss_from_targets(raw, assigned, obj, cfg).total; }, raw,
              1e-3);
  }
  return suite.entries;
}

}  // namespace cstyolo
