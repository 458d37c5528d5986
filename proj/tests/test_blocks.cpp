#include "cstyolo/nn/blocks.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace cstyolo;
using namespace cstyolo::nn;
using namespace testutil;

TEST_CASE("cbs: shapes and definition") {
  Rng rng(1);
  Cbs keep(3, 8, 1, 1, rng);
  CHECK(keep.forward(randn({1, 3, 9, 7}, 1, DType::f32)).shape() == Shape{1, 8, 9, 7});
  Cbs down(3, 32, 3, 2, rng);
  CHECK(down.forward(Tensor::zeros({1, 3, 64, 64})).shape() == Shape{1, 32, 32, 32});

  Tensor x = randn({2, 3, 6, 6}, 2, DType::f32);
  Tensor rm = down.bn().running_mean().clone(), rv = down.bn().running_var().clone();
  Tensor manual = activation(batchnorm2d(conv2d(x, down.conv().weight(), Tensor(), 2, 1),
                                         down.bn().gamma(), down.bn().beta(), rm, rv, {}),
                             Activation::silu);
  CHECK(down.forward(x).to_vector() == manual.to_vector());
}

TEST_CASE("elan: channel plan, taps and zero propagation") {
  Rng rng(2);
  Elan e(ElanPlan::backbone(16, 8, 24), rng);
  Tensor x = randn({2, 16, 6, 6}, 3, DType::f32);
  CHECK(e.forward(x).shape() == Shape{2, 24, 6, 6});
  auto taps = e.taps(x);
  CHECK(taps.size() == 4);
  int64_t c = 0;
  for (auto& t : taps) c += t.shape()[1];
  CHECK(c == e.plan().concat_channels());
  CHECK(concat(taps).shape()[1] == 32);

  Elan h(ElanPlan::head(16, 8, 12), rng);
  auto htaps = h.taps(x);
  CHECK(htaps.size() == 6);
  CHECK(concat(htaps).shape()[1] == 2 * 8 + 4 * 4);
  CHECK(h.forward(x).shape() == Shape{2, 12, 6, 6});

  const auto before = e.taps(x);
  for (Cbs* m : e.stack()) {
    for (auto& p : m->parameters()) *p.tensor = Tensor::zeros(p.tensor->shape()).set_requires_grad(true);
  }
  const auto after = e.taps(x);
  CHECK(after[2].to_vector() == before[2].to_vector());
  CHECK(after[3].to_vector() == before[3].to_vector());
  for (double v : after[0].to_vector()) CHECK(v == 0.0);
}

TEST_CASE("sppcspc: pyramid constant invariance and shapes") {
  Tensor c = Tensor::full({1, 2, 7, 7}, 0.75);
  for (auto& t : Sppcspc::pyramid(c, {5, 9, 13})) CHECK(t.to_vector() == c.to_vector());

  Rng rng(3);
  Sppcspc small(8, 6, rng);
  CHECK(small.forward(randn({1, 8, 11, 5}, 1, DType::f32)).shape() == Shape{1, 6, 11, 5});

  NoGradGuard ng;
  Sppcspc ref(1024, 512, rng);
  CHECK(ref.forward(Tensor::zeros({1, 1024, 20, 20})).shape() == Shape{1, 512, 20, 20});
  CHECK_THROWS_AS(Sppcspc(4, 4, rng, {4}), ConfigError);
}

TEST_CASE("repconv: folding rules") {
  Rng rng(4);
  BatchNorm2d bn(3);
  bn.running_var() = Tensor::full({1, 3, 1, 1}, 1.0 - bn.eps());
  Tensor w = randn({3, 2, 3, 3}, 5, DType::f32);
  FusedKernel k = fold_batchnorm(w, bn);
  CHECK(max_abs_diff(k.weight, w) < 1e-7);
  for (double v : k.bias.to_vector()) CHECK(v == 0.0);

  Tensor one = Tensor::from_values({1, 1, 1, 1}, std::vector<double>{2.5}, DType::f32);
  CHECK(pad_kernel_1x1_to_3x3(one).to_vector() == std::vector<double>{0, 0, 0, 0, 2.5, 0, 0, 0, 0});
}

TEST_CASE("repconv: fused forward equals train form over 100 random draws") {
  Rng rng(5);
  double worst = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const int s = 1 + draw % 2;
    RepConv r(4, 6, s, rng);
    oracle::randomize_bn(r.dense_bn(), rng);
    oracle::randomize_bn(r.pointwise_bn(), rng);
    r.eval();
    Tensor x = Tensor::normal({2, 4, 9, 8}, 0, 1, rng);
    Tensor y = r.forward(x);
    r.fuse();
    CHECK(r.is_fused());
    worst = std::max(worst, max_abs_diff(y, r.forward(x)));
  }
  CHECK(worst < 1e-5);

  RepConv id(4, 4, 1, rng, true);
  CHECK_THROWS_AS(id.fuse(), ContractError);
}

TEST_CASE("repconv: fusion replaces the branch parameters") {
  Rng rng(6);
  RepConv r(3, 5, 1, rng);
  CHECK(r.parameters().size() == 6);
  r.eval();
  r.fuse();
  auto p = r.parameters();
  REQUIRE(p.size() == 2);
  CHECK(p[0].path == "fused.weight");
  CHECK(p[0].tensor->shape() == Shape{5, 3, 3, 3});
}

TEST_CASE("mpconv: both variants halve spatial size with equal channel plans") {
  Rng rng(7);
  MpConv mp(16, 8, DownKind::maxpool, rng);
  MpConv cb(16, 8, DownKind::cbs, rng);
  Tensor x = randn({1, 16, 40, 40}, 8, DType::f32);
  CHECK(mp.forward(x).shape() == Shape{1, 16, 20, 20});
  CHECK(cb.forward(x).shape() == mp.forward(x).shape());
  CHECK(mp.out_channels() == 16);
  CHECK_THROWS_AS(mp.forward(Tensor::zeros({1, 16, 1, 1})), ShapeError);
}

TEST_CASE("blocks pass gradient checks in 64-bit mode") {
  Rng rng(8);
  Tensor x = leaf(randn({2, 4, 6, 6}, 9));
  {
    Cbs m(4, 6, 3, 2, rng);
    m.to(DType::f64);
    CHECK(check_module("cbs", m, x, [&](const Tensor& t) { return m.forward(t); }).max_rel_error <
          1e-4);
  }
  {
    Elan m(ElanPlan::backbone(4, 4, 6), rng);
    m.to(DType::f64);
    CHECK(check_module("elan", m, x, [&](const Tensor& t) { return m.forward(t); }).max_rel_error <
          1e-4);
  }
  {
    Sppcspc m(4, 4, rng, {3, 5});
    m.to(DType::f64);
    CHECK(check_module("sppcspc", m, x, [&](const Tensor& t) { return m.forward(t); })
              .max_rel_error < 1e-4);
  }
  {
    RepConv m(4, 4, 1, rng);
    m.to(DType::f64);
    CHECK(check_module("repconv", m, x, [&](const Tensor& t) { return m.forward(t); })
              .max_rel_error < 1e-4);
  }
  for (DownKind k : {DownKind::maxpool, DownKind::cbs}) {
    MpConv m(4, 3, k, rng);
    m.to(DType::f64);
    CHECK(check_module("mpconv", m, x, [&](const Tensor& t) { return m.forward(t); })
              .max_rel_error < 1e-4);
  }
}
